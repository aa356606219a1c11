"""Batch command-line front door.

Subcommands: simulate, train, estimate, tune, evaluate. Every run is driven
by a JSON config (``--config``, with ``--set key=value`` overrides) and
writes deterministic JSON/CSV reports that embed the resolved config and
seeds; identical configs and seeds reproduce byte-identical files.

Exit codes: 0 success, 2 config error, 3 data error, 4 training diverged,
5 selection failed.
"""

import argparse
import concurrent.futures
import json
import os
import sys

import numpy as np

from . import data as data_mod
from . import objectives
from .errors import (
    ConfigError, DagformerError, DataError, SelectionFailedError, TrainingDivergedError,
)
from .estimators import (
    estimate_aipw, estimate_gformula, estimate_iptw, estimate_proximal,
)
from .forest import ForestConfig
from .graph import CausalDag, demand_dag
from .model import DagTransformer, ModelConfig, train_model
from .optim import AdamState
from .selection import (
    c_mse, fit_plugin, grid_search, nrmse, nrmse_scalar_replicates, ranking_csv,
)

METHODS = ("gformula", "ipw", "aipw-joint", "aipw-separate", "proximal-u", "proximal-v")


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _load_config(args) -> dict:
    config = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target = config
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"--set path {key!r} collides with a non-object value")
        target[parts[-1]] = value
    if args.seed is not None:
        config["seed"] = args.seed
    return config


def _require(config: dict, key: str):
    if key not in config:
        raise ConfigError(f"config is missing required key {key!r}")
    return config[key]


def _method_of(config: dict) -> str:
    method = _require(config, "method")
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}, expected one of {METHODS}")
    return method


def _write_text(path: str, text: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _write_json(path: str, payload: dict):
    _write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _resolve_dag(config: dict):
    dag_cfg = config.get("dag")
    if isinstance(dag_cfg, dict):
        return CausalDag.from_dict(dag_cfg)
    if isinstance(dag_cfg, str):
        with open(dag_cfg, "r", encoding="utf-8") as fh:
            return CausalDag.from_dict(json.load(fh))
    sim = config.get("data", {}).get("simulator", {})
    name = sim.get("name")
    if name == "demand":
        return demand_dag()
    if name == "linear-scm":
        return data_mod.linear_scm_dag(int(sim.get("x_dim", 1)))
    raise ConfigError("config needs a 'dag' path or inline graph")


def _linear_scm_from(sim: dict) -> data_mod.LinearScm:
    x_dim = int(sim.get("x_dim", 1))
    base_effect = float(sim.get("treatment_effect", 2.0))
    slope = float(sim.get("effect_of_x1", 0.0))
    effect = base_effect if slope == 0.0 else data_mod.LinearEffect(base_effect, slope)
    return data_mod.LinearScm(
        x_dim=x_dim,
        propensity_weights=tuple(sim.get("propensity_weights", [0.5] * x_dim)),
        propensity_intercept=float(sim.get("propensity_intercept", 0.0)),
        outcome_weights=tuple(sim.get("outcome_weights", [1.0] * x_dim)),
        treatment_effect=effect,
        noise_sd=float(sim.get("noise_sd", 1.0)))


def _simulate(sim: dict, seed: int) -> data_mod.TabularDataset:
    name = sim.get("name")
    n = int(_require(sim, "n"))
    if name == "linear-scm":
        return data_mod.simulate_linear_scm(n, _linear_scm_from(sim), seed)
    if name == "demand":
        return data_mod.simulate_demand(n, seed).to_dataset()
    raise ConfigError(f"unknown simulator {name!r}")


def _resolve_data(config: dict, seed: int) -> data_mod.TabularDataset:
    data_cfg = _require(config, "data")
    if "simulator" in data_cfg:
        return _simulate(data_cfg["simulator"], int(data_cfg.get("seed", seed)))
    if "csv" in data_cfg:
        schema = data_mod.load_schema(_require(data_cfg, "schema"))
        return data_mod.load_csv(data_cfg["csv"], schema)
    raise ConfigError("data config needs either 'simulator' or 'csv'+'schema'")


def _model_config(config: dict, key: str, seed: int) -> ModelConfig:
    fields = dict(config.get(key) or config.get("model") or {})
    fields.setdefault("seed", seed)
    try:
        return ModelConfig(**fields)
    except TypeError as exc:
        raise ConfigError(f"bad model config: {exc}") from None


def _optimizer(config: dict) -> AdamState:
    opt = config.get("optimizer", {})
    return AdamState(learning_rate=float(opt.get("learning_rate", 1e-3)),
                     beta1=float(opt.get("beta1", 0.9)), beta2=float(opt.get("beta2", 0.999)),
                     epsilon=float(opt.get("epsilon", 1e-8)),
                     l2_penalty=float(opt.get("l2_penalty", 0.0)))


def _objective_for_method(method: str, config: dict):
    if method == "gformula":
        return objectives.GFormula()
    if method == "ipw":
        return objectives.Iptw()
    if method in ("aipw-joint", "aipw-separate"):
        return objectives.AipwJoint()
    nmmr = config.get("nmmr", {})
    return objectives.Nmmr(variant="U" if method.endswith("u") else "V",
                           kernel_bandwidth=nmmr.get("kernel_bandwidth"),
                           lam=float(nmmr.get("lambda", config.get(
                               "optimizer", {}).get("l2_penalty", 0.0))))


def _forest_config(config: dict, seed: int) -> ForestConfig:
    plug = config.get("plugin", {})
    return ForestConfig(n_trees=int(plug.get("n_trees", 200)),
                        max_depth=int(plug.get("max_depth", 8)),
                        min_leaf=int(plug.get("min_leaf", 5)),
                        subsample_fraction=float(plug.get("subsample_fraction", 0.5)),
                        seed=int(plug.get("seed", seed)))


def _node_kinds(dataset, dag) -> dict:
    from .graph import NodeRole
    nodes = [n for n, r in zip(dag.names, dag.roles) if r is not NodeRole.UNMEASURED]
    return dataset.node_kinds(nodes)


def _train_one(method: str, dag, dataset, config: dict, seed: int,
               model_key: str = "model"):
    """Build and train the model(s) a method needs; returns dict head->model."""
    kinds = _node_kinds(dataset, dag)
    epochs = int(config.get("epochs", 100))
    batch_size = int(config.get("batch_size", 32))
    if method == "aipw-separate":
        if "model_outcome" not in config or "model_propensity" not in config:
            raise ConfigError("aipw-separate needs 'model_outcome' and 'model_propensity' configs")
        outcome = DagTransformer(_model_config(config, "model_outcome", seed), dag,
                                 "gformula", kinds)
        log_o = train_model(outcome, dataset, objectives.GFormula(), _optimizer(config),
                            epochs, batch_size, seed=seed)
        propensity = DagTransformer(_model_config(config, "model_propensity", seed), dag,
                                    "ipw", kinds)
        log_p = train_model(propensity, dataset, objectives.Iptw(), _optimizer(config),
                            epochs, batch_size, seed=seed)
        return {"outcome": outcome, "propensity": propensity,
                "logs": {"outcome": log_o, "propensity": log_p}}
    base = {"gformula": "gformula", "ipw": "ipw", "aipw-joint": "aipw",
            "proximal-u": "proximal", "proximal-v": "proximal"}[method]
    model = DagTransformer(_model_config(config, model_key, seed), dag, base, kinds)
    log = train_model(model, dataset, _objective_for_method(method, config),
                      _optimizer(config), epochs, batch_size, seed=seed)
    return {"model": model, "logs": {"model": log}}


def _estimate_with(method: str, trained: dict, dataset, config: dict, seed: int):
    if method == "gformula":
        return estimate_gformula(trained["model"], dataset)
    if method == "ipw":
        return estimate_iptw(trained["model"], dataset)
    if method == "aipw-joint":
        return estimate_aipw(trained["model"], trained["model"], dataset)
    if method == "aipw-separate":
        return estimate_aipw(trained["outcome"], trained["propensity"], dataset)
    # proximal: average the bridge over held-out proxy draws
    model = trained["model"]
    heldout = config.get("heldout", {})
    m = int(heldout.get("draws", data_mod.DEMAND_HELDOUT_DRAWS))
    draw_seed = int(heldout.get("seed", seed))
    grid = config.get("a_grid")
    sim_name = config.get("data", {}).get("simulator", {}).get("name")
    if sim_name == "demand" or heldout.get("demand"):
        draws = {"W": data_mod.heldout_w_draws(m, draw_seed)}
        grid = grid or list(data_mod.DEMAND_PRICE_GRID)
    else:
        # fall back to the dataset's own proxy/confounder rows as the draw set
        from .graph import NodeRole
        nodes = [n for n in model.input_nodes
                 if model.graph.role_of(n) in (NodeRole.OUTCOME_PROXY, NodeRole.CONFOUNDER)]
        if not nodes:
            raise ConfigError("proximal estimation needs outcome-proxy or confounder columns")
        draws = {n: dataset.node_column(n).values for n in nodes}
        if grid is None:
            raise ConfigError("proximal estimation on external data needs 'a_grid'")
    return estimate_proximal(model, draws, [float(a) for a in grid])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    config = _load_config(args)
    sim = _require(config, "simulator") if "simulator" in config else \
        _require(config, "data")["simulator"]
    seed = int(config.get("seed", 0))
    out = args.out or config.get("out") or "."
    os.makedirs(out, exist_ok=True)
    dataset = _simulate(sim, seed)
    name = sim["name"]
    data_mod.write_csv(dataset, os.path.join(out, "data.csv"))
    schema = dataset.schema()
    schema["treatment"] = "A"
    schema["outcome"] = "Y"
    _write_json(os.path.join(out, "schema.json"), schema)
    if name == "demand":
        dag = demand_dag()
        sample = data_mod.simulate_demand(int(sim["n"]), seed)
        truth = {"u": [float(v) for v in sample.u],
                 "price_grid": list(data_mod.DEMAND_PRICE_GRID),
                 "true_curve": [float(v) for v in data_mod.demand_true_curve()]}
    else:
        dag = data_mod.linear_scm_dag(int(sim.get("x_dim", 1)))
        truth = {"true_ate": dataset.true_ate,
                 "true_cate": [float(v) for v in dataset.true_cate]}
    _write_json(os.path.join(out, "dag.json"), dag.to_dict())
    _write_json(os.path.join(out, "truth.json"), truth)
    manifest = {"simulator": name, "seed": seed, "n": int(sim["n"]),
                "scm_version": data_mod.DEMAND_SCM_VERSION if name == "demand" else "linear-scm-v1",
                "config": config}
    _write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"wrote {dataset.n}-row dataset to {out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    method = _method_of(config)
    seed = int(config.get("seed", 0))
    out = args.out or config.get("out") or "."
    dag = _resolve_dag(config)
    dataset = _resolve_data(config, seed)
    split = config.get("split")
    if split:
        dataset, _ = dataset.split(float(split.get("train_fraction", 0.7)),
                                   int(split.get("seed", seed)))
    trained = _train_one(method, dag, dataset, config, seed)
    os.makedirs(out, exist_ok=True)
    if method == "aipw-separate":
        trained["outcome"].save(os.path.join(out, "model_outcome.json"))
        trained["propensity"].save(os.path.join(out, "model_propensity.json"))
    else:
        trained["model"].save(os.path.join(out, "model.json"))
    _write_json(os.path.join(out, "training_log.json"),
                {"config": config, "seed": seed, "logs": trained["logs"]})
    print(f"trained {method} model(s); artifacts in {out}")
    return 0


def cmd_estimate(args) -> int:
    config = _load_config(args)
    method = _method_of(config)
    seed = int(config.get("seed", 0))
    out = args.out or config.get("out") or "."
    dataset = _resolve_data(config, seed)
    if method == "aipw-separate":
        trained = {"outcome": DagTransformer.load(_require(config, "model_outcome")),
                   "propensity": DagTransformer.load(_require(config, "model_propensity"))}
    else:
        trained = {"model": DagTransformer.load(_require(config, "model"))}
    report = _estimate_with(method, trained, dataset, config, seed)
    payload = {"config": config, "seed": seed, "report": report.to_dict()}
    _write_json(os.path.join(out, "estimate.json"), payload)
    if report.cate is not None:
        _write_text(os.path.join(out, "cate.csv"), report.cate_csv())
    ate_text = "n/a" if report.ate is None else f"{report.ate:.6g}"
    print(f"{method} ate: {ate_text}")
    return 0


def cmd_tune(args) -> int:
    config = _load_config(args)
    method = _method_of(config)
    if method == "aipw-separate":
        raise ConfigError("tune supports joint methods; run two tunes for separate training")
    seed = int(config.get("seed", 0))
    out = args.out or config.get("out") or "."
    dag = _resolve_dag(config)
    dataset = _resolve_data(config, seed)
    split = config.get("split", {})
    train, validation = dataset.split(float(split.get("train_fraction", 0.7)),
                                      int(split.get("seed", seed)))
    grid_cfg = _require(config, "grid")
    if isinstance(grid_cfg, str):
        with open(grid_cfg, "r", encoding="utf-8") as fh:
            grid = json.load(fh)
    else:
        grid = grid_cfg
    jobs = args.jobs or int(config.get("jobs", 1))
    rows, best = grid_search(grid, train, validation, method, dag,
                             mode=config.get("mode", "cate"), seed=seed,
                             plugin_config=_forest_config(config, seed),
                             node_kinds=_node_kinds(dataset, dag), jobs=jobs)
    os.makedirs(out, exist_ok=True)
    _write_text(os.path.join(out, "ranking.csv"), ranking_csv(rows))
    best.save(os.path.join(out, "best_model.json"))
    _write_json(os.path.join(out, "tune_report.json"),
                {"config": config, "seed": seed, "table": rows})
    print(f"tuned {len(rows)} configurations; best hash {rows[0]['config_hash']}")
    return 0


# -- evaluate ---------------------------------------------------------------

def _replicate_dataset(config: dict, replicate: int, seed: int):
    data_cfg = _require(config, "data")
    mode = config.get("replicate_mode", "simulate" if "simulator" in data_cfg else "bootstrap")
    if mode == "simulate":
        if "simulator" not in data_cfg:
            raise ConfigError("replicate_mode 'simulate' needs a simulator data config")
        return _simulate(data_cfg["simulator"], seed + replicate)
    base = _resolve_data(config, seed)
    return data_mod.bootstrap(base, seed + replicate)


def _effect_replicate(config: dict, replicate: int) -> dict:
    """One ATE/CATE replicate: train candidate, fit plug-in, record effects."""
    method = _method_of(config)
    seed = int(config.get("seed", 0))
    experiment = config.get("experiment", "ate")
    dag = _resolve_dag(config)
    dataset = _replicate_dataset(config, replicate, seed)
    split = config.get("split", {})
    train, validation = dataset.split(float(split.get("train_fraction", 0.7)),
                                      int(split.get("seed", seed)) + replicate)
    trained = _train_one(method, dag, train, config, seed + replicate)
    report = _estimate_with(method, trained, validation, config, seed + replicate)
    plugin = fit_plugin(validation, dag, _forest_config(config, seed + replicate))
    row = {"replicate": replicate, "candidate_ate": report.ate,
           "plugin_ate": plugin.ate(validation), "true_ate": validation.true_ate}
    if experiment == "cate":
        if report.cate is None:
            raise ConfigError(f"{method} produces no per-unit effects; use experiment 'ate'")
        reference = validation.true_cate if validation.true_cate is not None \
            else plugin.cate(validation)
        row["nrmse"] = nrmse(reference, report.cate)
    return row


def _demand_replicate(config: dict, replicate: int) -> dict:
    method = _method_of(config)
    if not method.startswith("proximal"):
        raise ConfigError("the demand experiment uses proximal-u or proximal-v")
    seed = int(config.get("seed", 0))
    sim = _require(config, "data")["simulator"]
    n = int(_require(sim, "n"))
    dag = demand_dag()
    dataset = data_mod.simulate_demand(n, seed + replicate).to_dataset()
    trained = _train_one(method, dag, dataset, config, seed + replicate)
    heldout = config.get("heldout", {})
    m = int(heldout.get("draws", data_mod.DEMAND_HELDOUT_DRAWS))
    draws = {"W": data_mod.heldout_w_draws(m, seed + replicate)}
    report = estimate_proximal(trained["model"], draws, list(data_mod.DEMAND_PRICE_GRID))
    curve = np.asarray([report.potential_outcomes[a] for a in data_mod.DEMAND_PRICE_GRID])
    true_curve = data_mod.demand_true_curve()
    naive = float(dataset.node_column("Y").values.mean())
    return {"replicate": replicate,
            "c_mse": c_mse(curve, true_curve),
            "c_mse_naive": c_mse(np.full(len(true_curve), naive), true_curve),
            "curve": [float(v) for v in curve]}


def _replicate_with_context(worker, config: dict, replicate: int) -> dict:
    """Run one replicate, tagging any failure with its index and config hash."""
    from .selection import config_hash
    try:
        return worker(config, replicate)
    except DagformerError as exc:
        exc.args = (f"replicate {replicate} (config {config_hash(config)}): {exc}",)
        raise


def _run_replicates(worker, config: dict, replicates: int, jobs: int) -> list[dict]:
    if jobs <= 1:
        return [_replicate_with_context(worker, config, r) for r in range(replicates)]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = {pool.submit(_replicate_with_context, worker, config, r): r
                   for r in range(replicates)}
        rows = [None] * replicates
        for future in concurrent.futures.as_completed(futures):
            rows[futures[future]] = future.result()
    return rows


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    seed = int(config.get("seed", 0))
    out = args.out or config.get("out") or "."
    replicates = int(config.get("replicates", 10))
    experiment = config.get("experiment", "ate")
    jobs = args.jobs or int(config.get("jobs", 1))
    if experiment == "demand":
        rows = _run_replicates(_demand_replicate, config, replicates, jobs)
        values = np.asarray([r["c_mse"] for r in rows])
        naive = np.asarray([r["c_mse_naive"] for r in rows])
        q25, q50, q75 = np.percentile(values, [25, 50, 75])
        aggregate = {"median_c_mse": float(q50), "iqr_c_mse": float(q75 - q25),
                     "median_c_mse_naive": float(np.median(naive))}
    elif experiment in ("ate", "cate"):
        rows = _run_replicates(_effect_replicate, config, replicates, jobs)
        plugin_ates = np.asarray([r["plugin_ate"] for r in rows])
        candidate = np.asarray([r["candidate_ate"] for r in rows])
        have_truth = all(r["true_ate"] is not None for r in rows)
        if experiment == "ate":
            reference = np.asarray([r["true_ate"] for r in rows]) if have_truth else plugin_ates
            scores = nrmse_scalar_replicates(reference, candidate, variance_source=plugin_ates)
            for row, score in zip(rows, scores):
                row["nrmse"] = float(score)
        scores = np.asarray([r["nrmse"] for r in rows])
        aggregate = {"mean_nrmse": float(scores.mean()),
                     "se_nrmse": float(scores.std(ddof=1) / np.sqrt(len(scores)))
                     if len(scores) > 1 else 0.0}
    else:
        raise ConfigError(f"unknown experiment {experiment!r}")
    payload = {"config": config, "seed": seed, "replicates": rows, "aggregate": aggregate}
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "evaluate.json"), payload)
    header = sorted({k for r in rows for k in r if k != "curve"})
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join("" if r.get(k) is None else repr(float(r[k])) if
                              isinstance(r.get(k), float) else str(r.get(k)) for k in header))
    _write_text(os.path.join(out, "replicates.csv"), "\n".join(lines) + "\n")
    print(json.dumps(aggregate, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dagformer",
                                     description="causal effect estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in (("simulate", cmd_simulate), ("train", cmd_train),
                          ("estimate", cmd_estimate), ("tune", cmd_tune),
                          ("evaluate", cmd_evaluate)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="path to a JSON run config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted keys, JSON values)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--jobs", type=int, default=None,
                       help="parallel replicates/grid points")
        p.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 4
    except SelectionFailedError as exc:
        print(f"selection failed: {exc}", file=sys.stderr)
        return 5
    except DagformerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
