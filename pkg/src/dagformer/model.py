"""DAG-masked attention model over tabular nodes.

Each DAG node is one position: its value is embedded (affine map for
continuous columns, 2-row lookup for binary ones), a per-node identity
embedding is added, and a pre-norm encoder stack attends only along the
mask compiled from the DAG (parents plus self). Each output head reads the
alpha-weighted encoder slice of its node concatenated with the raw
(standardized) values of that node's observed parents, through a small MLP.

Positions that carry an output head feed their identity embedding only, so
a head can never read its own observed value; together with the mask this
makes every head's prediction exactly invariant to non-ancestor columns.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import objectives, rng, tensor as T
from .errors import (
    ConfigError, DataError, DegenerateInputError, ShapeError, TrainingDivergedError,
)
from .graph import (
    CausalDag, NodeRole, build_adjacency, build_mask, input_nodes_for, mask_to_additive,
)
from .optim import AdamState, adam_step, zero_grads
from .tensor import Tensor

SNAPSHOT_VERSION = 1


@dataclass
class ModelConfig:
    embedding_dim: int = 16
    num_heads: int = 2
    num_encoder_layers: int = 1
    feedforward_dim: int = 32
    mlp_width: int = 32
    mlp_depth: int = 2
    dropout_rate: float = 0.0
    alpha: float = 0.02
    seed: int = 0
    encoder_bypass: bool = False

    def __post_init__(self):
        dims = {"embedding_dim": self.embedding_dim, "num_heads": self.num_heads,
                "num_encoder_layers": self.num_encoder_layers,
                "feedforward_dim": self.feedforward_dim, "mlp_width": self.mlp_width,
                "mlp_depth": self.mlp_depth}
        for name, value in dims.items():
            if int(value) != value or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value}")
        if self.embedding_dim % self.num_heads != 0:
            raise ConfigError(
                f"embedding_dim {self.embedding_dim} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.alpha < 0.0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")


class DagTransformer:
    """Masked-attention model bound to a causal graph and estimation method."""

    def __init__(self, config: ModelConfig, dag: CausalDag, method: str,
                 node_kinds: dict[str, str]):
        self.config = config
        self.method = method
        self.dag = dag
        inputs, heads = input_nodes_for(method, dag)
        self.graph = dag.induced_subgraph(inputs)
        self.input_nodes = list(self.graph.names)
        self.head_nodes = list(heads)
        self.treatment_node = dag.single_node(NodeRole.TREATMENT)
        missing = [n for n in self.input_nodes if n not in node_kinds]
        if missing:
            raise ConfigError(f"no column kind given for nodes {missing}")
        self.node_kinds = {n: node_kinds[n] for n in self.input_nodes}
        for n, kind in self.node_kinds.items():
            if kind not in ("continuous", "binary"):
                raise ConfigError(f"node {n}: unknown kind {kind!r}")
        self.mask = build_mask(build_adjacency(self.graph))
        self._additive_mask = mask_to_additive(self.mask)
        self.head_parents = {h: [p for p in self.graph.names if p in self.graph.parents_of(h)]
                             for h in self.head_nodes}
        # standardization stats per input node; identity until fitted
        d = len(self.input_nodes)
        self.col_mean = np.zeros(d)
        self.col_sd = np.ones(d)
        self.params: dict[str, Tensor] = {}
        self._build_params()

    # -- construction --------------------------------------------------------

    def _init(self, name: str, shape: tuple, bound: float) -> Tensor:
        g = rng.stream(self.config.seed, "init", name)
        t = T.parameter(g.uniform(-bound, bound, shape))
        self.params[name] = t
        return t

    def _const_param(self, name: str, value: np.ndarray) -> Tensor:
        t = T.parameter(value)
        self.params[name] = t
        return t

    def _build_params(self):
        cfg = self.config
        e, f = cfg.embedding_dim, cfg.feedforward_dim
        bound_e = 1.0 / np.sqrt(e)
        for node in self.input_nodes:
            if node in self.head_nodes:
                continue  # head positions feed their identity embedding only
            if self.node_kinds[node] == "binary":
                self._init(f"embed/{node}/table", (2, e), bound_e)
            else:
                self._init(f"embed/{node}/weight", (1, e), bound_e)
                self._const_param(f"embed/{node}/bias", np.zeros(e))
        self._init("node_identity", (len(self.input_nodes), e), bound_e)
        for i in range(cfg.num_encoder_layers):
            p = f"enc{i}"
            self._const_param(f"{p}/ln1/gain", np.ones(e))
            self._const_param(f"{p}/ln1/bias", np.zeros(e))
            for proj in ("wq", "wk", "wv", "wo"):
                self._init(f"{p}/attn/{proj}", (e, e), bound_e)
                self._const_param(f"{p}/attn/b{proj[1]}", np.zeros(e))
            self._const_param(f"{p}/ln2/gain", np.ones(e))
            self._const_param(f"{p}/ln2/bias", np.zeros(e))
            self._init(f"{p}/ffn/w1", (e, f), bound_e)
            self._const_param(f"{p}/ffn/b1", np.zeros(f))
            self._init(f"{p}/ffn/w2", (f, e), 1.0 / np.sqrt(f))
            self._const_param(f"{p}/ffn/b2", np.zeros(e))
        self._const_param("final_ln/gain", np.ones(e))
        self._const_param("final_ln/bias", np.zeros(e))
        for head in self.head_nodes:
            widths = [e + len(self.head_parents[head])]
            widths += [cfg.mlp_width] * cfg.mlp_depth
            widths.append(1)
            for j, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
                self._init(f"head/{head}/w{j}", (w_in, w_out), 1.0 / np.sqrt(w_in))
                self._const_param(f"head/{head}/b{j}", np.zeros(w_out))

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- standardization -----------------------------------------------------

    def fit_standardizer(self, batch: np.ndarray):
        """Record per-column mean/sd (continuous columns) from training data."""
        self._check_batch(batch)
        for i, node in enumerate(self.input_nodes):
            if self.node_kinds[node] == "binary":
                self.col_mean[i], self.col_sd[i] = 0.0, 1.0
            else:
                sd = batch[:, i].std()
                self.col_mean[i] = batch[:, i].mean()
                self.col_sd[i] = sd if sd > 0 else 1.0

    def _standardize(self, batch: np.ndarray) -> np.ndarray:
        return (batch - self.col_mean) / self.col_sd

    def _node_index(self, node: str) -> int:
        try:
            return self.input_nodes.index(node)
        except ValueError:
            raise ConfigError(f"node {node!r} is not a model input") from None

    def _check_batch(self, batch: np.ndarray):
        batch = np.asarray(batch)
        if batch.ndim != 2 or batch.shape[1] != len(self.input_nodes):
            raise ShapeError(
                f"batch must be (n, {len(self.input_nodes)}) over nodes {self.input_nodes}, "
                f"got {batch.shape}")
        for i, node in enumerate(self.input_nodes):
            if self.node_kinds[node] == "binary" and not np.isin(batch[:, i], (0.0, 1.0)).all():
                bad = int(np.nonzero(~np.isin(batch[:, i], (0.0, 1.0)))[0][0])
                raise DataError(f"binary column for node {node!r}: bad value at row {bad}")

    # -- forward -------------------------------------------------------------

    def forward(self, batch: np.ndarray, train: bool = False,
                dropout_rng: np.random.Generator | None = None,
                collect_attention: list | None = None) -> dict[str, Tensor]:
        """Predictions per head node, on the model (standardized) scale.

        Treatment-head outputs pass through a sigmoid and live in (0, 1).
        """
        batch = np.asarray(batch, dtype=np.float64)
        self._check_batch(batch)
        cfg = self.config
        if train and cfg.dropout_rate > 0 and dropout_rng is None:
            raise ConfigError("training forward with dropout needs a dropout stream")
        std = self._standardize(batch)
        n = batch.shape[0]
        e = cfg.embedding_dim

        per_node = []
        for i, node in enumerate(self.input_nodes):
            ident = T.gather_rows(self.params["node_identity"], np.full(n, i, dtype=np.int64))
            if node in self.head_nodes:
                per_node.append(ident)
            elif self.node_kinds[node] == "binary":
                value = T.gather_rows(self.params[f"embed/{node}/table"],
                                      batch[:, i].astype(np.int64))
                per_node.append(value + ident)
            else:
                col = Tensor(std[:, i:i + 1])
                value = T.matmul(col, self.params[f"embed/{node}/weight"]) \
                    + self.params[f"embed/{node}/bias"]
                per_node.append(value + ident)
        x = T.stack_nodes(per_node)  # (n, d, e)

        use_encoder = not cfg.encoder_bypass
        if use_encoder:
            h = x
            for i in range(cfg.num_encoder_layers):
                h = self._encoder_layer(h, i, train, dropout_rng, collect_attention)
            h = T.layer_norm(h, self.params["final_ln/gain"], self.params["final_ln/bias"])

        outputs: dict[str, Tensor] = {}
        for head in self.head_nodes:
            idx = self._node_index(head)
            if use_encoder:
                combined = T.take_node(h, idx) * cfg.alpha
            else:
                combined = Tensor(np.zeros((n, e)))
            parents = self.head_parents[head]
            if parents:
                raw = Tensor(std[:, [self._node_index(p) for p in parents]])
                z = T.concat_lastdim([combined, raw])
            else:
                z = combined
            out = self._head_mlp(head, z, train, dropout_rng)
            if self.graph.role_of(head) is NodeRole.TREATMENT:
                out = T.sigmoid(out)
            outputs[head] = out
        return outputs

    def _encoder_layer(self, x: Tensor, layer: int, train: bool,
                       dropout_rng, collect_attention) -> Tensor:
        cfg = self.config
        p = f"enc{layer}"
        n, d, e = x.shape
        heads, dh = cfg.num_heads, e // cfg.num_heads

        xn = T.layer_norm(x, self.params[f"{p}/ln1/gain"], self.params[f"{p}/ln1/bias"])
        q = T.matmul(xn, self.params[f"{p}/attn/wq"]) + self.params[f"{p}/attn/bq"]
        k = T.matmul(xn, self.params[f"{p}/attn/wk"]) + self.params[f"{p}/attn/bk"]
        v = T.matmul(xn, self.params[f"{p}/attn/wv"]) + self.params[f"{p}/attn/bv"]

        def split_heads(t):
            return T.transpose(T.reshape(t, (n, d, heads, dh)), (0, 2, 1, 3))

        q, k, v = split_heads(q), split_heads(k), split_heads(v)
        scores = T.matmul(q, T.swap_last2(k)) * (1.0 / np.sqrt(dh))
        scores = scores + Tensor(self._additive_mask)
        attn = T.softmax_lastdim(scores)
        if collect_attention is not None:
            collect_attention.append(attn.data.copy())
        ctx = T.matmul(attn, v)  # (n, heads, d, dh)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (n, d, e))
        ctx = T.matmul(ctx, self.params[f"{p}/attn/wo"]) + self.params[f"{p}/attn/bo"]
        ctx = T.dropout(ctx, cfg.dropout_rate, train, dropout_rng)
        x = x + ctx

        xn = T.layer_norm(x, self.params[f"{p}/ln2/gain"], self.params[f"{p}/ln2/bias"])
        ff = T.relu(T.matmul(xn, self.params[f"{p}/ffn/w1"]) + self.params[f"{p}/ffn/b1"])
        ff = T.matmul(ff, self.params[f"{p}/ffn/w2"]) + self.params[f"{p}/ffn/b2"]
        ff = T.dropout(ff, cfg.dropout_rate, train, dropout_rng)
        return x + ff

    def _head_mlp(self, head: str, z: Tensor, train: bool, dropout_rng) -> Tensor:
        cfg = self.config
        out = z
        for j in range(cfg.mlp_depth + 1):
            out = T.matmul(out, self.params[f"head/{head}/w{j}"]) + self.params[f"head/{head}/b{j}"]
            if j < cfg.mlp_depth:
                out = T.relu(out)
                out = T.dropout(out, cfg.dropout_rate, train, dropout_rng)
        return T.reshape(out, (out.shape[0],))

    def attention_maps(self, batch: np.ndarray) -> list[np.ndarray]:
        """Post-softmax attention weights per layer, each (n, heads, d, d)."""
        maps: list[np.ndarray] = []
        self.forward(batch, train=False, collect_attention=maps)
        return maps

    # -- prediction ----------------------------------------------------------

    def _destandardize_head(self, head: str, values: np.ndarray) -> np.ndarray:
        if self.graph.role_of(head) is NodeRole.TREATMENT:
            return values  # probability scale
        i = self._node_index(head)
        return values * self.col_sd[i] + self.col_mean[i]

    def predict(self, batch: np.ndarray) -> dict[str, np.ndarray]:
        """Deterministic raw-scale predictions per head."""
        outs = self.forward(batch, train=False)
        return {head: self._destandardize_head(head, t.data) for head, t in outs.items()}

    def counterfactual_predict(self, batch: np.ndarray, value: float) -> dict[str, np.ndarray]:
        """Predictions with the treatment column overwritten by `value`."""
        batch = np.array(batch, dtype=np.float64, copy=True)
        batch[:, self._node_index(self.treatment_node)] = value
        return self.predict(batch)

    def mu_hat(self, dataset, a: float) -> np.ndarray:
        """Counterfactual outcome predictions on a dataset's rows."""
        outcome = self.dag.single_node(NodeRole.OUTCOME)
        if outcome not in self.head_nodes:
            raise ConfigError(f"model has no outcome head (heads: {self.head_nodes})")
        batch = dataset.matrix(self.input_nodes)
        return self.counterfactual_predict(batch, a)[outcome]

    def pi_hat(self, dataset) -> np.ndarray:
        """Propensity predictions on a dataset's rows."""
        if self.treatment_node not in self.head_nodes:
            raise ConfigError(f"model has no treatment head (heads: {self.head_nodes})")
        batch = dataset.matrix(self.input_nodes)
        return self.predict(batch)[self.treatment_node]

    def h_hat(self, a: float, draws: dict[str, np.ndarray]) -> np.ndarray:
        """Bridge-function values h(a, draws) averaged over by the caller.

        Input columns absent from `draws` (other than the treatment) are
        filled with their training means.
        """
        outcome = self.dag.single_node(NodeRole.OUTCOME)
        if outcome not in self.head_nodes:
            raise ConfigError(f"model has no outcome head (heads: {self.head_nodes})")
        sizes = {np.asarray(v).size for v in draws.values()}
        if len(sizes) != 1:
            raise ShapeError(f"heldout draws have unequal lengths: {sorted(sizes)}")
        (m,) = sizes
        batch = np.tile(self.col_mean, (m, 1))
        for node, values in draws.items():
            batch[:, self._node_index(node)] = np.asarray(values, dtype=np.float64)
        batch[:, self._node_index(self.treatment_node)] = a
        return self.predict(batch)[outcome]

    # -- snapshots -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": SNAPSHOT_VERSION,
            "config": asdict(self.config),
            "method": self.method,
            "dag": self.dag.to_dict(),
            "node_kinds": self.node_kinds,
            "input_nodes": self.input_nodes,
            "standardizer": {"mean": self.col_mean.tolist(), "sd": self.col_sd.tolist()},
            "params": {name: p.data.tolist() for name, p in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DagTransformer":
        if d.get("format_version") != SNAPSHOT_VERSION:
            raise ConfigError(f"unsupported snapshot version {d.get('format_version')!r}")
        model = cls(ModelConfig(**d["config"]), CausalDag.from_dict(d["dag"]),
                    d["method"], d["node_kinds"])
        if model.input_nodes != d["input_nodes"]:
            raise ConfigError("snapshot node order does not match rebuilt model")
        model.col_mean = np.asarray(d["standardizer"]["mean"], dtype=np.float64)
        model.col_sd = np.asarray(d["standardizer"]["sd"], dtype=np.float64)
        for name, values in d["params"].items():
            if name not in model.params:
                raise ConfigError(f"snapshot has unknown parameter {name!r}")
            arr = np.asarray(values, dtype=np.float64)
            if arr.shape != model.params[name].data.shape:
                raise ConfigError(f"snapshot parameter {name!r} has shape {arr.shape}, "
                                  f"expected {model.params[name].data.shape}")
            model.params[name].data = arr
        return model

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "DagTransformer":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _objective_heads(objective) -> tuple[bool, bool]:
    """(needs outcome head, needs treatment head)."""
    if isinstance(objective, objectives.GFormula):
        return True, False
    if isinstance(objective, objectives.Iptw):
        return False, True
    if isinstance(objective, objectives.AipwJoint):
        return True, True
    if isinstance(objective, objectives.Nmmr):
        return True, False
    raise ConfigError(f"unknown objective {objective!r}")


def kernel_feature_nodes(model: DagTransformer) -> list[str]:
    """Treatment, treatment proxies and confounders, in model input order."""
    keep_roles = (NodeRole.TREATMENT, NodeRole.TREATMENT_PROXY, NodeRole.CONFOUNDER)
    return [n for n in model.input_nodes if model.graph.role_of(n) in keep_roles]


def train_model(model: DagTransformer, dataset, objective, optimizer: AdamState,
                epochs: int, batch_size: int, seed: int | None = None) -> list[dict]:
    """Mini-batch training; returns the per-epoch log. The model is updated
    in place and is unchanged when epochs == 0.
    """
    if epochs < 0 or batch_size < 1:
        raise ConfigError(f"bad training sizes: epochs={epochs}, batch_size={batch_size}")
    needs_outcome, needs_treatment = _objective_heads(objective)
    outcome = model.dag.single_node(NodeRole.OUTCOME) if needs_outcome else None
    treatment = model.treatment_node
    if needs_outcome and outcome not in model.head_nodes:
        raise ConfigError(f"objective needs an outcome head; model has {model.head_nodes}")
    if needs_treatment and treatment not in model.head_nodes:
        raise ConfigError(f"objective needs a treatment head; model has {model.head_nodes}")

    seed = model.config.seed if seed is None else seed
    batch_all = dataset.matrix(model.input_nodes)
    model.fit_standardizer(batch_all)
    std_all = model._standardize(batch_all)
    n = batch_all.shape[0]

    y_std = std_all[:, model._node_index(outcome)] if needs_outcome else None
    a_obs = batch_all[:, model._node_index(treatment)] if needs_treatment else None

    is_nmmr = isinstance(objective, objectives.Nmmr)
    features = bandwidth = None
    if is_nmmr:
        feat_cols = [model._node_index(nd) for nd in kernel_feature_nodes(model)]
        features = std_all[:, feat_cols]
        bandwidth = objective.kernel_bandwidth
        if bandwidth is None:
            bandwidth = objectives.median_heuristic_bandwidth(features)

    params = model.parameters()
    dropout_rng = rng.stream(seed, "dropout")
    outcome_sd = model.col_sd[model._node_index(outcome)] if needs_outcome else None
    log: list[dict] = []
    # overflow/invalid produce a non-finite loss, which is detected below and
    # escalated to TrainingDivergedError; the interim FP warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            perm = rng.stream(seed, "shuffle", epoch).permutation(n)
            losses = []
            mses = []
            for start in range(0, n, batch_size):
                rows = perm[start:start + batch_size]
                if is_nmmr and objective.variant == "U" and rows.size < 2:
                    continue  # a trailing singleton batch has no off-diagonal pairs
                try:
                    preds = model.forward(batch_all[rows], train=True,
                                          dropout_rng=dropout_rng)
                except DegenerateInputError as exc:
                    # scores overflowing to -inf across a whole row means the
                    # parameters blew up, not that the mask is malformed
                    raise TrainingDivergedError(
                        f"attention scores overflowed at epoch {epoch}, "
                        f"batch {start // batch_size}: {exc}",
                        epoch=epoch, batch=start // batch_size) from exc
                if isinstance(objective, objectives.GFormula):
                    loss = objectives.loss_gformula(preds[outcome], y_std[rows])
                    mses.append(float(loss.data))
                elif isinstance(objective, objectives.Iptw):
                    loss = objectives.loss_iptw(preds[treatment], a_obs[rows])
                elif isinstance(objective, objectives.AipwJoint):
                    mse = objectives.loss_gformula(preds[outcome], y_std[rows])
                    bce = objectives.loss_iptw(preds[treatment], a_obs[rows])
                    loss = (mse + bce) * 0.5
                    mses.append(float(mse.data))
                else:
                    kernel = objectives.rbf_kernel_matrix(features[rows], bandwidth)
                    loss = objectives.loss_nmmr(y_std[rows], preds[outcome], kernel,
                                                objective.variant, objective.lam, params)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise TrainingDivergedError(
                        f"non-finite loss {value} at epoch {epoch}, "
                        f"batch {start // batch_size}",
                        epoch=epoch, batch=start // batch_size)
                zero_grads(params)
                T.backward(loss)
                adam_step(params, optimizer)
                losses.append(value)
            entry = {"epoch": epoch, "loss": float(np.mean(losses))}
            if mses:
                entry["mse_raw"] = float(np.mean(mses)) * float(outcome_sd) ** 2
            log.append(entry)
    return log
