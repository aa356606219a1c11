"""Evaluation metrics and surrogate-scored model selection.

Candidate models are ranked by normalized RMSE against a plug-in effect
estimator (an honest-forest T-learner) fit on the validation split; the
proxy-method variants, where no plug-in exists, rank by validation risk.
"""

import hashlib
import itertools
import json
from dataclasses import dataclass

import numpy as np

from . import objectives
from .errors import (
    ConfigError, ContractError, DataError, DegenerateInputError, SelectionFailedError,
    TrainingDivergedError,
)
from .forest import ForestConfig, HonestForestRegressor
from .graph import CausalDag, NodeRole
from .model import DagTransformer, ModelConfig, train_model
from .optim import AdamState


def nrmse(tau_hat: np.ndarray, tau_tilde: np.ndarray) -> float:
    """Root mean squared difference normalized by the reference's variance.

    tau_hat is the reference (plug-in or ground truth); both the numerator
    and the variance use the n-1 denominator.
    """
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    tau_tilde = np.asarray(tau_tilde, dtype=np.float64)
    if tau_hat.shape != tau_tilde.shape or tau_hat.ndim != 1:
        raise ContractError(f"need matching vectors, got {tau_hat.shape} and {tau_tilde.shape}")
    n = tau_hat.size
    if n < 2:
        raise ContractError(f"nrmse needs n >= 2, got {n}")
    variance = tau_hat.var(ddof=1)
    if variance <= 0.0:
        raise DegenerateInputError("reference effect estimates have zero variance")
    msd = np.sum((tau_hat - tau_tilde) ** 2) / (n - 1)
    return float(np.sqrt(msd / variance))


def nrmse_scalar_replicates(reference: np.ndarray, candidate: np.ndarray,
                            variance_source: np.ndarray | None = None) -> np.ndarray:
    """Per-replicate normalized error of scalar estimates.

    The normalizing variance is taken across replicates of `variance_source`
    (defaults to the reference itself), matching the bootstrap-replicate
    reading of the scalar-estimand protocol.
    """
    reference = np.asarray(reference, dtype=np.float64)
    candidate = np.asarray(candidate, dtype=np.float64)
    if reference.shape != candidate.shape or reference.ndim != 1:
        raise ContractError("need matching replicate vectors")
    source = reference if variance_source is None else np.asarray(variance_source)
    if source.size < 2:
        raise ContractError("need at least two replicates")
    variance = source.var(ddof=1)
    if variance <= 0.0:
        raise DegenerateInputError("replicate variance of the reference is zero")
    return np.abs(reference - candidate) / np.sqrt(variance)


def c_mse(estimated_curve, true_curve) -> float:
    """Mean squared error between potential-outcome curves over the grid."""
    est = np.asarray(estimated_curve, dtype=np.float64)
    true = np.asarray(true_curve, dtype=np.float64)
    if est.shape != true.shape or est.ndim != 1 or est.size == 0:
        raise ContractError(f"curves must match, got {est.shape} and {true.shape}")
    return float(np.mean((est - true) ** 2))


# ---------------------------------------------------------------------------
# plug-in estimator
# ---------------------------------------------------------------------------

@dataclass
class PlugInEstimator:
    """Honest-forest T-learner: tau(x) = mean_1(x) - mean_0(x)."""
    forest_treated: HonestForestRegressor
    forest_control: HonestForestRegressor
    covariate_nodes: list[str]

    def cate(self, dataset) -> np.ndarray:
        x = dataset.matrix(self.covariate_nodes)
        return self.forest_treated.predict(x) - self.forest_control.predict(x)

    def ate(self, dataset) -> float:
        return float(self.cate(dataset).mean())


def fit_plugin(validation, dag: CausalDag, config: ForestConfig | None = None) -> PlugInEstimator:
    """Fit one honest forest per treatment arm on the validation split."""
    config = config or ForestConfig()
    treatment = dag.single_node(NodeRole.TREATMENT)
    outcome = dag.single_node(NodeRole.OUTCOME)
    covariates = dag.nodes_with_role(NodeRole.CONFOUNDER)
    if not covariates:
        raise ConfigError("plug-in estimator needs at least one confounder column")
    a = validation.node_column(treatment).values
    if not np.isin(a, (0.0, 1.0)).all():
        raise DataError("plug-in estimator requires a binary treatment")
    y = validation.node_column(outcome).values
    x = validation.matrix(covariates)
    forests = {}
    for arm in (1.0, 0.0):
        rows = a == arm
        if rows.sum() < config.min_leaf:
            raise DataError(
                f"treatment arm {int(arm)} has {int(rows.sum())} rows, fewer than "
                f"min_leaf {config.min_leaf}")
        arm_cfg = ForestConfig(config.n_trees, config.max_depth, config.min_leaf,
                               config.subsample_fraction, config.seed + int(arm))
        forests[arm] = HonestForestRegressor(arm_cfg).fit(x[rows], y[rows])
    return PlugInEstimator(forests[1.0], forests[0.0], covariates)


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

GRID_KEYS = ("epochs", "batch_size", "learning_rate", "l2_penalty", "mlp_width",
             "mlp_depth", "encoder_layers", "dropout", "embedding_dim",
             "feedforward_dim", "num_heads", "alpha")

SEARCH_METHODS = ("gformula", "ipw", "aipw-joint", "proximal-u", "proximal-v")


def expand_grid(grid: dict) -> list[dict]:
    """Cartesian product of per-parameter value lists, in stable key order."""
    missing = [k for k in GRID_KEYS if k not in grid]
    if missing:
        raise ConfigError(f"grid is missing parameters {missing}")
    unknown = [k for k in grid if k not in GRID_KEYS]
    if unknown:
        raise ConfigError(f"grid has unknown parameters {unknown}")
    lists = []
    for key in GRID_KEYS:
        values = grid[key]
        if not isinstance(values, (list, tuple)) or not values:
            raise ConfigError(f"grid parameter {key!r} must be a nonempty list")
        lists.append(values)
    return [dict(zip(GRID_KEYS, combo)) for combo in itertools.product(*lists)]


def config_hash(point: dict) -> str:
    text = json.dumps(point, sort_keys=True)
    return hashlib.sha1(text.encode("utf-8")).hexdigest()[:12]


def _model_config(point: dict, seed: int) -> ModelConfig:
    return ModelConfig(
        embedding_dim=int(point["embedding_dim"]), num_heads=int(point["num_heads"]),
        num_encoder_layers=int(point["encoder_layers"]),
        feedforward_dim=int(point["feedforward_dim"]), mlp_width=int(point["mlp_width"]),
        mlp_depth=int(point["mlp_depth"]), dropout_rate=float(point["dropout"]),
        alpha=float(point["alpha"]), seed=seed)


def _objective_for(method: str, point: dict):
    if method == "gformula":
        return objectives.GFormula()
    if method == "ipw":
        return objectives.Iptw()
    if method == "aipw-joint":
        return objectives.AipwJoint()
    if method == "proximal-u":
        return objectives.Nmmr(variant="U", lam=float(point["l2_penalty"]))
    return objectives.Nmmr(variant="V", lam=float(point["l2_penalty"]))


def _base_method(method: str) -> str:
    return {"gformula": "gformula", "ipw": "ipw", "aipw-joint": "aipw",
            "proximal-u": "proximal", "proximal-v": "proximal"}[method]


def _candidate_tau(model: DagTransformer, method: str, validation, mode: str):
    """Candidate effect predictions on the validation rows."""
    from .estimators import estimate_gformula, estimate_iptw

    if method in ("gformula", "aipw-joint"):
        report = estimate_gformula(model, validation)
        if mode == "cate":
            return report.cate
        return np.full(validation.n, report.ate)
    report = estimate_iptw(model, validation)
    return np.full(validation.n, report.ate)


def _validation_risk(model: DagTransformer, objective, validation) -> float:
    """Held-out objective value for proxy-method candidates."""
    from .model import kernel_feature_nodes

    batch = validation.matrix(model.input_nodes)
    std = model._standardize(batch)
    outcome = model.dag.single_node(NodeRole.OUTCOME)
    y = std[:, model._node_index(outcome)]
    preds = model.forward(batch)
    h = preds[outcome].data
    cols = [model._node_index(nd) for nd in kernel_feature_nodes(model)]
    features = std[:, cols]
    bandwidth = objective.kernel_bandwidth or objectives.median_heuristic_bandwidth(features)
    kernel = objectives.rbf_kernel_matrix(features, bandwidth)
    return float(objectives.loss_nmmr(y, h, kernel, objective.variant, 0.0).data)


def _evaluate_grid_point(payload: tuple) -> tuple[dict, dict | None]:
    """Train and score one grid point; module-level so workers can pickle it."""
    index, point, train, validation, method, dag, seed, node_kinds, mode, plugin_tau = payload
    entry = {"grid_index": index, "config_hash": config_hash(point), "config": point,
             "diverged": False, "train_loss": None, "score": None, "param_count": None}
    proximal = method.startswith("proximal")
    objective = _objective_for(method, point)
    model = DagTransformer(_model_config(point, seed), dag, _base_method(method), node_kinds)
    entry["param_count"] = model.param_count
    optimizer = AdamState(learning_rate=float(point["learning_rate"]),
                          l2_penalty=0.0 if proximal else float(point["l2_penalty"]))
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            log = train_model(model, train, objective, optimizer,
                              epochs=int(point["epochs"]),
                              batch_size=int(point["batch_size"]), seed=seed)
            entry["train_loss"] = log[-1]["loss"] if log else None
            if proximal:
                entry["score"] = _validation_risk(model, objective, validation)
            else:
                tau = _candidate_tau(model, method, validation, mode)
                entry["score"] = nrmse(plugin_tau, tau)
            if not np.isfinite(entry["score"]):
                raise TrainingDivergedError("non-finite validation score")
    except TrainingDivergedError:
        entry["diverged"] = True
        entry["score"] = None
        return entry, None
    return entry, model.to_dict()


def grid_search(grid: dict, train, validation, method: str, dag: CausalDag,
                mode: str = "cate", seed: int = 0,
                plugin_config: ForestConfig | None = None,
                node_kinds: dict | None = None, jobs: int = 1):
    """Train one candidate per grid point and rank them.

    Unconfoundedness methods score by NRMSE between candidate effects and a
    plug-in fit on the validation split (per-unit in "cate" mode, scalar
    broadcast in "ate" mode); proxy methods score by validation risk.
    Ties break toward fewer parameters, then earlier grid order. Grid
    points are independent and run concurrently when jobs > 1. Returns
    (ranked table, best fitted model).
    """
    if method not in SEARCH_METHODS:
        raise ConfigError(f"unknown method {method!r}, expected one of {SEARCH_METHODS}")
    if mode not in ("cate", "ate"):
        raise ConfigError(f"mode must be 'cate' or 'ate', got {mode!r}")
    points = expand_grid(grid)
    node_kinds = node_kinds or validation.node_kinds(
        [n for n, r in zip(dag.names, dag.roles) if r is not NodeRole.UNMEASURED])
    proximal = method.startswith("proximal")
    plugin_tau = None
    if not proximal:
        plugin = fit_plugin(validation, dag, plugin_config)
        plugin_tau = plugin.cate(validation) if mode == "cate" \
            else np.full(validation.n, plugin.ate(validation))

    payloads = [(index, point, train, validation, method, dag, seed, node_kinds,
                 mode, plugin_tau) for index, point in enumerate(points)]
    if jobs > 1:
        import concurrent.futures
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate_grid_point, payloads))
    else:
        results = [_evaluate_grid_point(p) for p in payloads]

    rows = [entry for entry, _ in results]
    snapshots = {entry["grid_index"]: snap for entry, snap in results}
    rows.sort(key=lambda e: (e["diverged"], e["score"] if e["score"] is not None else np.inf,
                             e["param_count"], e["grid_index"]))
    for rank, entry in enumerate(rows):
        entry["rank"] = rank
    if rows[0]["diverged"]:
        raise SelectionFailedError("every grid configuration diverged", table=rows)
    best = DagTransformer.from_dict(snapshots[rows[0]["grid_index"]])
    return rows, best


def ranking_csv(rows: list[dict]) -> str:
    lines = ["rank,config_hash,score,train_loss,diverged,param_count,grid_index"]
    for e in rows:
        score = "" if e["score"] is None else repr(float(e["score"]))
        train_loss = "" if e["train_loss"] is None else repr(float(e["train_loss"]))
        lines.append(f'{e["rank"]},{e["config_hash"]},{score},{train_loss},'
                     f'{int(e["diverged"])},{e["param_count"]},{e["grid_index"]}')
    return "\n".join(lines) + "\n"
