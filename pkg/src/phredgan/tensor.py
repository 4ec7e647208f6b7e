"""Dense float32 arrays with reverse-mode gradient accumulation.

Ops record themselves on the active Tape when any input requires grad.
backward() replays the tape in reverse execution order exactly once;
a spent tape rejects further backward calls (no double backward). All
storage is float32; gradients share the dtype and shape of their values.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "tape", "active_tape", "backward",
    "add", "sub", "mul", "neg", "matmul", "concat", "stack", "reshape",
    "slice_axis", "tanh", "sigmoid", "relu", "log", "clip", "softmax",
    "embed", "cross_entropy_with_logits", "reduce_sum", "reduce_mean",
    "random_normal", "constant",
]


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.data.shape} is not scalar")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars are wrapped as constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a supported op; multiply by a reciprocal constant")
        return mul(self, constant(1.0 / float(other)))


def constant(value) -> Tensor:
    return Tensor(np.asarray(value, dtype=np.float32))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


class Tape:
    """Ordered record of differentiable ops; reversing it is a valid topological order."""

    def __init__(self):
        self._records = []  # (out, inputs, backward_fn)
        self._spent = False

    def __len__(self):
        return len(self._records)

    def __enter__(self):
        _push(self)
        return self

    def __exit__(self, *exc):
        _pop(self)
        return False


_TAPE_STACK: list[Tape] = []


def _push(t: Tape):
    _TAPE_STACK.append(t)


def _pop(t: Tape):
    assert _TAPE_STACK and _TAPE_STACK[-1] is t
    _TAPE_STACK.pop()


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def tape() -> Tape:
    """Fresh tape for use as a context manager: `with tape() as t: ...`."""
    return Tape()


def _record(out: Tensor, inputs, backward_fn):
    t = active_tape()
    if t is None:
        return
    if any(i.requires_grad for i in inputs):
        out.requires_grad = True
        t._records.append((out, inputs, backward_fn))


def backward(loss: Tensor):
    """Accumulate dLoss/dX into .grad of every requires-grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    t = active_tape()
    if t is None:
        raise RuntimeError("backward: no active tape")
    if t._spent:
        raise RuntimeError("backward: tape already consumed; build a fresh tape per step")
    if not any(rec[0] is loss for rec in t._records):
        raise RuntimeError("backward: loss was not recorded on the active tape")
    t._spent = True
    loss.grad = np.ones_like(loss.data)
    for out, inputs, fn in reversed(t._records):
        if out.grad is None:
            continue
        grads = fn(out.grad)
        for inp, g in zip(inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = np.asarray(g, dtype=np.float32)
            else:
                inp.grad = inp.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape`, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.astype(np.float32)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast")
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data - b.data)
    except ValueError:
        raise ShapeError(f"sub: shapes {a.data.shape} and {b.data.shape} do not broadcast")
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast")
    _record(out, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.data.shape),
        _unbroadcast(g * a.data, b.data.shape),
    ))
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    _record(out, (a,), lambda g: (-g,))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape} are not (m,k)x(k,n)")
    out = Tensor(a.data @ b.data)
    _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    try:
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError:
        shapes = [t.data.shape for t in tensors]
        raise ShapeError(f"concat: shapes {shapes} do not align on axis {axis}")
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    _record(out, tuple(tensors), bwd)
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("stack: empty input list")
    shapes = {t.data.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: mismatched shapes {sorted(shapes)}")
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.moveaxis(g, axis, 0))

    _record(out, tuple(tensors), bwd)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = Tensor(a.data.reshape(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {a.data.shape} as {shape}")
    _record(out, (a,), lambda g: (g.reshape(a.data.shape),))
    return out


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    n = a.data.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice_axis: [{start}:{stop}] out of range for shape {a.data.shape} axis {axis}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(a.data[idx])

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    _record(out, (a,), bwd)
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    _record(out, (a,), lambda g: (g * (1.0 - y * y),))
    return out


def sigmoid(a: Tensor) -> Tensor:
    # Stable in both tails: 1/(1+e^-x) for x>=0, e^x/(1+e^x) otherwise.
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(np.float32)
    out = Tensor(y)
    _record(out, (a,), lambda g: (g * y * (1.0 - y),))
    return out


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)
    out = Tensor(y)
    _record(out, (a,), lambda g: (g * (a.data > 0),))
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    _record(out, (a,), lambda g: (g / a.data,))
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    y = np.clip(a.data, lo, hi)
    out = Tensor(y)
    mask = ((a.data > lo) & (a.data < hi)).astype(np.float32)
    _record(out, (a,), lambda g: (g * mask,))
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, numerically stabilized."""
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    y = (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    _record(out, (a,), bwd)
    return out


# ---------------------------------------------------------------------------
# lookup, losses, reductions


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: table (V, d), ids int array of any shape -> (*ids.shape, d)."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"embed: ids must be integers, got dtype {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(f"embed: id out of range for table shape {table.data.shape}")
    out = Tensor(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    _record(out, (table,), bwd)
    return out


def cross_entropy_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row -log softmax(logits)[target]; logits (B, V), targets (B,) ints -> (B,)."""
    targets = np.asarray(targets)
    if logits.data.ndim != 2 or targets.shape != (logits.data.shape[0],):
        raise ShapeError(
            f"cross_entropy_with_logits: logits {logits.data.shape} vs targets {targets.shape}"
        )
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=-1, keepdims=True)
    logp = (x - m) - np.log(z)
    rows = np.arange(x.shape[0])
    out = Tensor(-logp[rows, targets])
    probs = e / z

    def bwd(g):
        gl = probs.copy()
        gl[rows, targets] -= 1.0
        return (gl * g[:, None],)

    _record(out, (logits,), bwd)
    return out


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).astype(np.float32),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).astype(np.float32),)

    _record(out, (a,), bwd)
    return out


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis))

    def bwd(g):
        if axis is None:
            return ((np.broadcast_to(g, a.data.shape) / n).astype(np.float32),)
        return ((np.broadcast_to(np.expand_dims(g, axis), a.data.shape) / n).astype(np.float32),)

    _record(out, (a,), bwd)
    return out


def random_normal(shape, std: float, rng) -> Tensor:
    """Leaf tensor of N(0, std^2) draws from the run's seeded engine."""
    if std < 0:
        raise ValueError("random_normal: std must be nonnegative")
    if std == 0:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        return Tensor(np.zeros(shape, dtype=np.float32))
    return Tensor(rng.normal(shape, std))
