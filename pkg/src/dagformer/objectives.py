"""Training objectives: outcome MSE, treatment BCE, their joint average,
and the kernel moment-restriction losses (U- and V-statistic variants).

All losses are built from tape primitives so gradients flow to the model;
callers may pass plain arrays where no gradient is needed.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ContractError, DataError
from .tensor import Tensor

BCE_CLAMP = 1e-12


@dataclass
class GFormula:
    """Outcome-regression objective (MSE on the outcome head)."""


@dataclass
class Iptw:
    """Propensity objective (BCE on the treatment head)."""


@dataclass
class AipwJoint:
    """Joint objective: (MSE + BCE) / 2 over both heads."""


@dataclass
class Nmmr:
    """Kernel moment-restriction objective for the bridge-function head.

    variant "U" zeroes the kernel diagonal and normalizes by n(n-1);
    variant "V" keeps it and normalizes by n^2. `lam` scales the sum of
    squared model parameters added to the risk. `kernel_bandwidth` of None
    means the median pairwise-distance heuristic, computed on the training
    features once per run.
    """
    variant: str = "U"
    kernel_bandwidth: Optional[float] = None
    lam: float = 0.0

    def __post_init__(self):
        if self.variant not in ("U", "V"):
            raise ContractError(f"NMMR variant must be 'U' or 'V', got {self.variant!r}")
        if self.lam < 0:
            raise ContractError(f"NMMR lambda must be >= 0, got {self.lam}")
        if self.kernel_bandwidth is not None and self.kernel_bandwidth <= 0:
            raise ContractError(f"kernel bandwidth must be > 0, got {self.kernel_bandwidth}")


Objective = GFormula | Iptw | AipwJoint | Nmmr


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _check_lengths(*arrays):
    sizes = {np.asarray(a.data if isinstance(a, Tensor) else a).size for a in arrays}
    if len(sizes) != 1:
        raise ContractError(f"inputs have unequal lengths: {sorted(sizes)}")
    (n,) = sizes
    if n < 1:
        raise ContractError("loss needs at least one observation")
    return n


def loss_gformula(y_hat, y) -> Tensor:
    """Mean squared error (1/n) sum (y_hat_i - y_i)^2."""
    _check_lengths(y_hat, y)
    diff = _as_tensor(y_hat) - _as_tensor(y)
    return T.mean_all(diff * diff)


def loss_iptw(a_hat, a) -> Tensor:
    """Binary cross-entropy; predictions clamped to [1e-12, 1 - 1e-12]."""
    _check_lengths(a_hat, a)
    a_arr = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    if not np.isin(a_arr, (0.0, 1.0)).all():
        raise DataError("treatment labels must be 0/1")
    p = T.clip(_as_tensor(a_hat), BCE_CLAMP, 1.0 - BCE_CLAMP)
    a_t = Tensor(a_arr)
    return T.neg(T.mean_all(a_t * T.log(p) + (1.0 - a_t) * T.log(1.0 - p)))


def loss_aipw_joint(y_hat, y, a_hat, a) -> Tensor:
    """(MSE + BCE) / 2 over the outcome and treatment heads."""
    return (loss_gformula(y_hat, y) + loss_iptw(a_hat, a)) * 0.5


def median_heuristic_bandwidth(rows: np.ndarray) -> float:
    """Median pairwise Euclidean distance of the feature rows."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    n = rows.shape[0]
    if n < 2:
        raise ContractError("median heuristic needs at least two rows")
    d2 = _pairwise_sq_dists(rows)
    upper = d2[np.triu_indices(n, k=1)]
    med = float(np.median(np.sqrt(np.maximum(upper, 0.0))))
    if med == 0.0:
        raise ContractError("all feature rows identical; bandwidth undefined")
    return med


def _pairwise_sq_dists(rows: np.ndarray) -> np.ndarray:
    sq = (rows * rows).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * rows @ rows.T
    return np.maximum(d2, 0.0)


def rbf_kernel_matrix(rows: np.ndarray, bandwidth: float) -> np.ndarray:
    """K[i, j] = exp(-||u_i - u_j||^2 / (2 sigma^2)) over the feature rows."""
    if bandwidth <= 0:
        raise ContractError(f"bandwidth must be > 0, got {bandwidth}")
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    return np.exp(-_pairwise_sq_dists(rows) / (2.0 * bandwidth * bandwidth))


def penalty_sum_squares(params: list[Tensor]) -> Tensor:
    """Sum of squares of every trainable parameter entry."""
    total = Tensor(0.0)
    for p in params:
        total = total + T.sum_all(p * p)
    return total


def loss_nmmr(y, h_vals, kernel: np.ndarray, variant: str, lam: float,
              params: Optional[list[Tensor]] = None) -> Tensor:
    """Penalized kernel moment-restriction risk on residuals r = y - h.

    variant "U": r^T K0 r / (n (n-1)) with the kernel diagonal zeroed;
    variant "V": r^T K r / n^2. Plus lam * sum of squared parameters.
    """
    n = _check_lengths(y, h_vals)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.shape != (n, n):
        raise ContractError(f"kernel must be {n}x{n}, got {kernel.shape}")
    if variant == "U":
        if n < 2:
            raise ContractError("U-statistic variant needs n >= 2")
        k = kernel.copy()
        np.fill_diagonal(k, 0.0)
        scale = 1.0 / (n * (n - 1))
    elif variant == "V":
        k = kernel
        scale = 1.0 / (n * n)
    else:
        raise ContractError(f"unknown NMMR variant {variant!r}")
    r = _as_tensor(y) - _as_tensor(h_vals)
    r_col = T.reshape(r, (n, 1))
    quad = T.matmul(T.swap_last2(r_col), T.matmul(Tensor(k), r_col))
    loss = T.reshape(quad, ()) * scale
    if lam != 0.0:
        if params is None:
            raise ContractError("lam > 0 requires the model parameter list")
        loss = loss + penalty_sum_squares(params) * lam
    return loss
