import numpy as np
import pytest

from dagformer import rng
from dagformer.data import LinearScm, linear_scm_dag, simulate_linear_scm
from dagformer.errors import (
    ConfigError, ContractError, DataError, DegenerateInputError, SelectionFailedError,
)
from dagformer.forest import ForestConfig, HonestForestRegressor
from dagformer.selection import (
    c_mse, config_hash, expand_grid, fit_plugin, grid_search, nrmse,
    nrmse_scalar_replicates, ranking_csv,
)


def test_nrmse_zero_when_equal():
    v = np.array([0.2, 1.4, -0.5])
    assert nrmse(v, v) == 0.0


def test_nrmse_hand_value():
    assert abs(nrmse(np.array([0.0, 2.0]), np.array([1.0, 1.0])) - 1.0) < 1e-12


def test_nrmse_scale_invariance():
    g = rng.stream(51, "scale")
    tau_hat = g.standard_normal(100)
    tau_tilde = g.standard_normal(100)
    base = nrmse(tau_hat, tau_tilde)
    for c in (3.0, -0.25, 1e6):
        scaled = nrmse(c * tau_hat, c * tau_tilde)
        assert abs(scaled - base) < 1e-12 * max(1.0, base)


def test_nrmse_degenerate_reference():
    with pytest.raises(DegenerateInputError):
        nrmse(np.ones(5), np.zeros(5))
    with pytest.raises(ContractError):
        nrmse(np.array([1.0]), np.array([2.0]))


def test_nrmse_scalar_replicates():
    reference = np.array([1.0, 2.0, 3.0])
    candidate = np.array([1.5, 2.0, 2.0])
    out = nrmse_scalar_replicates(reference, candidate)
    sd = reference.std(ddof=1)
    assert np.allclose(out, np.abs(reference - candidate) / sd)
    with pytest.raises(DegenerateInputError):
        nrmse_scalar_replicates(np.ones(3), np.zeros(3))


def test_cmse_identities():
    curve = np.linspace(0, 9, 10)
    assert c_mse(curve, curve) == 0.0
    delta = 2.5
    assert c_mse(curve + delta, curve) == delta ** 2
    with pytest.raises(ContractError):
        c_mse(np.zeros(10), np.zeros(9))


def test_cmse_matches_loop_oracle():
    g = rng.stream(52, "cmse")
    a, b = g.standard_normal(10), g.standard_normal(10)
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) ** 2
    assert abs(c_mse(a, b) - total / 10) < 1e-12


def _plugin_dataset(n, tau, seed):
    scm = LinearScm(x_dim=1, propensity_weights=(0.3,), outcome_weights=(1.0,),
                    treatment_effect=tau, noise_sd=1.0)
    return simulate_linear_scm(n, scm, seed)


def test_forest_constant_outcome_gives_zero_effect():
    ds = _plugin_dataset(300, 0.0, seed=1)
    y = ds.column("Y")
    y.values = np.full(ds.n, 4.2)
    plugin = fit_plugin(ds, linear_scm_dag(1), ForestConfig(n_trees=30))
    tau = plugin.cate(ds)
    assert np.max(np.abs(tau)) < 1e-12


def test_forest_recovers_constant_effect():
    ds = _plugin_dataset(4000, 2.0, seed=3)
    plugin = fit_plugin(ds, linear_scm_dag(1), ForestConfig(n_trees=100, seed=5))
    assert abs(plugin.cate(ds).mean() - 2.0) < 0.2


def test_forest_deterministic_per_seed():
    ds = _plugin_dataset(500, 1.0, seed=4)
    dag = linear_scm_dag(1)
    t1 = fit_plugin(ds, dag, ForestConfig(n_trees=20, seed=9)).cate(ds)
    t2 = fit_plugin(ds, dag, ForestConfig(n_trees=20, seed=9)).cate(ds)
    assert np.array_equal(t1, t2)


def test_forest_honesty_structural():
    g = rng.stream(53, "honest")
    x = g.standard_normal((400, 2))
    y = x[:, 0] * 2.0 + g.standard_normal(400)
    forest = HonestForestRegressor(ForestConfig(n_trees=10, seed=2)).fit(x, y)
    for tree in forest.trees:
        structure = set(tree.structure_rows.tolist())
        estimate = set(tree.estimate_rows.tolist())
        assert not structure & estimate
        for leaf in tree.leaves():
            leaf_rows = set(leaf.estimate_rows.tolist())
            assert not leaf_rows & structure
            if leaf_rows:
                assert abs(leaf.value - y[sorted(leaf_rows)].mean()) < 1e-12


def test_fit_plugin_insufficient_arm_rows():
    ds = _plugin_dataset(40, 1.0, seed=6)
    a = ds.column("A")
    a.values = np.zeros(40)
    a.values[0] = 1.0
    with pytest.raises(DataError, match="arm 1"):
        fit_plugin(ds, linear_scm_dag(1), ForestConfig(min_leaf=5))


def _grid(**overrides):
    base = {"epochs": [15], "batch_size": [32], "learning_rate": [3e-3],
            "l2_penalty": [0.0], "mlp_width": [8], "mlp_depth": [1],
            "encoder_layers": [1], "dropout": [0.0], "embedding_dim": [8],
            "feedforward_dim": [16], "num_heads": [2], "alpha": [0.1]}
    base.update(overrides)
    return base


def test_expand_grid_requires_all_keys():
    grid = _grid()
    del grid["alpha"]
    with pytest.raises(ConfigError, match="alpha"):
        expand_grid(grid)
    with pytest.raises(ConfigError, match="unknown"):
        expand_grid(_grid(bogus=[1]))


def test_expand_grid_cartesian_order():
    points = expand_grid(_grid(num_heads=[1, 2], alpha=[0.1, 0.2]))
    assert len(points) == 4
    assert (points[0]["num_heads"], points[0]["alpha"]) == (1, 0.1)
    assert (points[1]["num_heads"], points[1]["alpha"]) == (1, 0.2)


def test_grid_search_singleton():
    ds = _plugin_dataset(400, 2.0, seed=7)
    train, validation = ds.split(0.7, seed=1)
    rows, best = grid_search(_grid(), train, validation, "gformula", linear_scm_dag(1),
                             seed=3, plugin_config=ForestConfig(n_trees=30))
    assert len(rows) == 1
    assert rows[0]["rank"] == 0 and not rows[0]["diverged"]
    assert np.isfinite(rows[0]["score"])
    assert best is not None


def test_grid_search_broken_lr_ranks_last():
    ds = _plugin_dataset(400, 2.0, seed=8)
    train, validation = ds.split(0.7, seed=2)
    rows, best = grid_search(_grid(learning_rate=[3e-3, 10.0]), train, validation,
                             "gformula", linear_scm_dag(1), seed=4,
                             plugin_config=ForestConfig(n_trees=30))
    assert rows[0]["config"]["learning_rate"] == 3e-3
    assert rows[1]["config"]["learning_rate"] == 10.0
    assert rows[1]["diverged"] or rows[1]["score"] > rows[0]["score"]


def test_grid_search_all_diverged_raises():
    ds = _plugin_dataset(200, 2.0, seed=9)
    train, validation = ds.split(0.7, seed=3)
    with pytest.raises(SelectionFailedError) as info:
        grid_search(_grid(learning_rate=[1e150]), train, validation, "gformula",
                    linear_scm_dag(1), seed=5, plugin_config=ForestConfig(n_trees=10))
    assert info.value.table is not None


def test_grid_search_ate_mode_uses_scalar_broadcast():
    ds = _plugin_dataset(300, 2.0, seed=10)
    train, validation = ds.split(0.7, seed=4)
    rows, _ = grid_search(_grid(epochs=[5]), train, validation, "ipw", linear_scm_dag(1),
                          mode="ate", seed=6, plugin_config=ForestConfig(n_trees=20))
    assert np.isfinite(rows[0]["score"])


def test_ranking_csv_format():
    rows = [{"rank": 0, "config_hash": "abc", "score": 0.5, "train_loss": 0.1,
             "diverged": False, "param_count": 10, "grid_index": 0},
            {"rank": 1, "config_hash": "def", "score": None, "train_loss": None,
             "diverged": True, "param_count": 12, "grid_index": 1}]
    text = ranking_csv(rows)
    lines = text.strip().split("\n")
    assert lines[0] == "rank,config_hash,score,train_loss,diverged,param_count,grid_index"
    assert lines[1].startswith("0,abc,0.5")
    assert lines[2] == "1,def,,,1,12,1"


def test_config_hash_stable():
    point = {"alpha": 0.1, "epochs": 10}
    assert config_hash(point) == config_hash(dict(reversed(list(point.items()))))
