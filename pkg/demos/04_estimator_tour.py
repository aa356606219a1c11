"""The three adjustment estimators side by side, plus double robustness.

Runs standardization, inverse-probability weighting and the augmented
(doubly robust) estimator on one confounded dataset, first with oracle
nuisances and then with one nuisance deliberately broken.
"""

import numpy as np

from dagformer.data import LinearScm, simulate_linear_scm
from dagformer.estimators import (
    aipw_from_nuisances, cate_by_group, gformula_from_mu, iptw_from_pi,
)

scm = LinearScm(x_dim=1, propensity_weights=(1.0,), outcome_weights=(1.5,),
                treatment_effect=2.0, noise_sd=1.0)
ds = simulate_linear_scm(20000, scm, seed=3)
x = ds.column("X1").values
a = ds.column("A").values
y = ds.column("Y").values
true_pi = 1.0 / (1.0 + np.exp(-x))
mu1 = scm.mu(1.0, x[:, None])
mu0 = scm.mu(0.0, x[:, None])

naive = y[a == 1].mean() - y[a == 0].mean()
print(f"true ATE 2.0; naive difference in means {naive:.3f} (confounded upward)")

print(f"standardization with the true outcome model: "
      f"{gformula_from_mu(mu1, mu0).ate:.3f}")
ipw = iptw_from_pi(a, y, true_pi)
print(f"inverse-probability weighting with the true propensity: {ipw.ate:.3f} "
      f"(effective sample size {ipw.diagnostics['effective_sample_size']:.0f} of {ds.n})")
print(f"augmented estimator with both true: "
      f"{aipw_from_nuisances(a, y, mu1, mu0, true_pi).ate:.3f}")

print("\ndouble robustness, one nuisance broken at a time:")
broken_mu = aipw_from_nuisances(a, y, np.zeros(ds.n), np.zeros(ds.n), true_pi)
print(f"  outcome model forced to zero, true propensity -> {broken_mu.ate:.3f}")
broken_pi = aipw_from_nuisances(a, y, mu1, mu0, np.full(ds.n, 0.5))
print(f"  propensity forced to 0.5, true outcome model -> {broken_pi.ate:.3f}")

groups = (x > 0).astype(int)
by_group = cate_by_group(broken_pi, groups)
print(f"\nper-unit effects grouped by X1 > 0: {by_group} "
      f"(effect is homogeneous, so both are near 2)")
