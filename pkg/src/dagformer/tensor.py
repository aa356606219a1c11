"""Dense float64 arrays with reverse-mode automatic differentiation.

Every operation records its inputs and a backward rule on the produced
tensor; ``backward(loss)`` replays those rules in reverse topological order.
Sized for models with at most a few hundred thousand parameters, CPU only.
"""

import numpy as np

from .errors import ContractError, DegenerateInputError, ShapeError

__all__ = [
    "Tensor", "GradientTape", "tensor", "constant", "parameter", "backward",
    "matmul", "add", "sub", "mul", "div", "neg", "pow_scalar", "exp", "log",
    "relu", "sigmoid", "clip", "transpose", "swap_last2", "reshape",
    "concat_lastdim", "stack_nodes", "take_node", "sum_all", "mean_all",
    "sum_axis", "mean_axis", "softmax_lastdim", "layer_norm", "dropout",
    "gather_rows",
]


class Tensor:
    """A node in the autodiff graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _needs_grad(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and ndarrays are wrapped as constants
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __pow__(self, p):
        return pow_scalar(self, p)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accumulate(t: Tensor, grad: np.ndarray):
    if t.grad is None:
        t.grad = grad.copy() if grad.base is not None or grad.flags.writeable is False else grad
    else:
        t.grad = t.grad + grad


class GradientTape:
    """Reverse-topological record of the ops reaching a scalar loss.

    A tape is replayable exactly once; re-running without rebuilding the
    graph is rejected because accumulated gradients would double-count.
    """

    def __init__(self, loss: Tensor):
        if loss.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        self.loss = loss
        self.order: list[Tensor] = []
        seen = set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.order.append(node)
                continue
            if id(node) in seen or not node._needs_grad():
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

    def run(self):
        """Populate .grad on every reachable tensor that needs one."""
        if self.loss._consumed:
            raise ContractError("backward was already run for this loss; rebuild the graph first")
        self.loss._consumed = True
        self.loss.grad = np.ones_like(self.loss.data)
        for node in reversed(self.order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def backward(loss: Tensor):
    """Run reverse-mode differentiation from a scalar loss."""
    GradientTape(loss).run()


def _make(data: np.ndarray, parents, bwd) -> Tensor:
    if any(p._needs_grad() for p in parents):
        return Tensor(data, _parents=tuple(p for p in parents if p._needs_grad()), _backward=bwd)
    return Tensor(data)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g):
        if a._needs_grad():
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b._needs_grad():
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bwd(g):
        if a._needs_grad():
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b._needs_grad():
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g):
        if a._needs_grad():
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b._needs_grad():
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data / b.data

    def bwd(g):
        if a._needs_grad():
            _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        if b._needs_grad():
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out_data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), bwd)


def pow_scalar(a: Tensor, p: float) -> Tensor:
    out_data = a.data ** p

    def bwd(g):
        _accumulate(a, g * p * a.data ** (p - 1))

    return _make(out_data, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bwd(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), bwd)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        _accumulate(a, g * (a.data > 0.0))

    return _make(out_data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through strictly inside the bounds."""
    out_data = np.clip(a.data, lo, hi)

    def bwd(g):
        _accumulate(a, g * ((a.data > lo) & (a.data < hi)))

    return _make(out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs matrix operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    out_data = np.matmul(a.data, b.data)

    def bwd(g):
        if a._needs_grad():
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b._needs_grad():
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(out_data, (a, b), bwd)


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accumulate(a, np.transpose(g, inv))

    return _make(np.transpose(a.data, axes), (a,), bwd)


def swap_last2(a: Tensor) -> Tensor:
    axes = tuple(range(a.data.ndim - 2)) + (a.data.ndim - 1, a.data.ndim - 2)
    return transpose(a, axes)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old_shape = a.data.shape

    def bwd(g):
        _accumulate(a, g.reshape(old_shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def concat_lastdim(parts: list) -> Tensor:
    parts = [_wrap(p) for p in parts]
    widths = [p.data.shape[-1] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=-1)
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p._needs_grad():
                _accumulate(p, g[..., lo:hi])

    return _make(out_data, tuple(parts), bwd)


def stack_nodes(parts: list) -> Tensor:
    """Stack per-node (N, E) tensors into (N, D, E)."""
    parts = [_wrap(p) for p in parts]
    out_data = np.stack([p.data for p in parts], axis=1)

    def bwd(g):
        for i, p in enumerate(parts):
            if p._needs_grad():
                _accumulate(p, g[:, i, :])

    return _make(out_data, tuple(parts), bwd)


def take_node(a: Tensor, index: int) -> Tensor:
    """Select node slice (N, E) out of (N, D, E)."""
    out_data = a.data[:, index, :]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, index, :] = g
        _accumulate(a, full)

    return _make(out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(np.asarray(a.data.sum()), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def bwd(g):
        _accumulate(a, np.broadcast_to(g / n, a.data.shape).copy())

    return _make(np.asarray(a.data.mean()), (a,), bwd)


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(out_data, (a,), bwd)


def mean_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    n = a.data.shape[axis]
    out_data = a.data.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(gg / n, a.data.shape).copy())

    return _make(out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# neural-network primitives
# ---------------------------------------------------------------------------

def softmax_lastdim(a: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis.

    Entries may be -inf (masked positions map to exactly 0); a slice that is
    entirely -inf has no permitted targets and is rejected.
    """
    m = a.data.max(axis=-1, keepdims=True)
    if np.isneginf(m).any():
        raise DegenerateInputError("softmax slice is entirely -inf: no permitted attention targets")
    e = np.exp(a.data - m)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        _accumulate(a, out_data * (g - dot))

    return _make(out_data, (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def bwd(g):
        if gain._needs_grad():
            _accumulate(gain, _unbroadcast(g * xhat, gain.data.shape))
        if bias._needs_grad():
            _accumulate(bias, _unbroadcast(g, bias.data.shape))
        if x._needs_grad():
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (dxhat - m1 - xhat * m2))

    return _make(out_data, (x, gain, bias), bwd)


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when train is False or rate is 0."""
    if not train or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out_data = x.data * keep

    def bwd(g):
        _accumulate(x, g * keep)

    return _make(out_data, (x,), bwd)


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Embedding lookup: rows of (R, E) table selected by an int vector."""
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ContractError("gather indices must be integers")
    out_data = table.data[idx]

    def bwd(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        _accumulate(table, dt)

    return _make(out_data, (table,), bwd)
