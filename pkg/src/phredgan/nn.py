"""Parameter storage and the recurrent building blocks of the models.

A ParameterStore maps hierarchical names to trainable tensors. Modules
(GRU cells, linear heads, attention) create their parameters inside a
store at construction and keep references; two modules built over the
same store entries share the identical Tensor objects, which is how the
generator and the discriminators share word embeddings and the encoder.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ParameterStore:
    """Named, shaped, trainable float32 arrays with shared-ownership semantics."""

    def __init__(self, rng):
        self._params: dict[str, Tensor] = {}
        self._rng = rng

    def add(self, name: str, shape, init: str = "xavier") -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        shape = tuple(shape)
        if init == "xavier":
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            fan_out = shape[1] if len(shape) > 1 else shape[0]
            limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
            data = self._rng.uniform_range(shape, -limit, limit)
        elif init == "zeros":
            data = np.zeros(shape, dtype=np.float32)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self, prefixes=None) -> list[Tensor]:
        """Parameters in insertion order, optionally filtered by name prefix.

        A tensor reachable under several matching prefixes is returned once.
        """
        if prefixes is None:
            return list(self._params.values())
        seen, out = set(), []
        for name, t in self._params.items():
            if any(name.startswith(p) for p in prefixes) and id(t) not in seen:
                seen.add(id(t))
                out.append(t)
        return out

    def zero_grad(self, prefixes=None):
        for t in self.tensors(prefixes):
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, t in self._params.items():
            arr = np.asarray(state[k], dtype=np.float32)
            if arr.shape != t.data.shape:
                raise ValueError(f"parameter {k}: stored shape {arr.shape} != expected {t.data.shape}")
            t.data = np.ascontiguousarray(arr)

    def count(self) -> int:
        return sum(t.data.size for t in self._params.values())


class Linear:
    def __init__(self, store: ParameterStore, prefix: str, in_dim: int, out_dim: int):
        self.w = store.add(f"{prefix}.w", (in_dim, out_dim))
        self.b = store.add(f"{prefix}.b", (out_dim,), init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)


class GruCell:
    """Single GRU cell, canonical update/reset/candidate formulation.

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    n = tanh(x W_n + (r*h) U_n + b_n)
    h' = (1 - z)*h + z*n

    Input-side weights and biases are fused as [z | r | n] along the last
    axis; the hidden-side z/r weights are fused separately from U_n because
    the candidate multiplies r into h before the matmul.
    """

    def __init__(self, store: ParameterStore, prefix: str, in_dim: int, hidden: int):
        self.hidden = hidden
        self.w_in = store.add(f"{prefix}.w_in", (in_dim, 3 * hidden))
        self.u_zr = store.add(f"{prefix}.u_zr", (hidden, 2 * hidden))
        self.u_n = store.add(f"{prefix}.u_n", (hidden, hidden))
        self.bias = store.add(f"{prefix}.bias", (3 * hidden,), init="zeros")

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        return gru_cell_step(x, h, self)


def gru_cell_step(x: Tensor, h: Tensor, cell: GruCell) -> Tensor:
    H = cell.hidden
    if x.data.shape[-1] != cell.w_in.data.shape[0]:
        raise T.ShapeError(
            f"gru_cell_step: input width {x.data.shape} does not match cell input {cell.w_in.data.shape}"
        )
    if h.data.shape[-1] != H:
        raise T.ShapeError(
            f"gru_cell_step: hidden width {h.data.shape} does not match cell hidden ({H},)"
        )
    gx = T.add(T.matmul(x, cell.w_in), cell.bias)
    gh = T.matmul(h, cell.u_zr)
    z = T.sigmoid(T.add(T.slice_axis(gx, -1, 0, H), T.slice_axis(gh, -1, 0, H)))
    r = T.sigmoid(T.add(T.slice_axis(gx, -1, H, 2 * H), T.slice_axis(gh, -1, H, 2 * H)))
    n = T.tanh(T.add(T.slice_axis(gx, -1, 2 * H, 3 * H), T.matmul(T.mul(r, h), cell.u_n)))
    return T.add(h, T.mul(z, T.sub(n, h)))


class GruStack:
    """Unidirectional stack of GRU cells stepped one time step at a time."""

    def __init__(self, store: ParameterStore, prefix: str, in_dim: int, hidden: int, layers: int):
        self.hidden = hidden
        self.layers = layers
        self.cells = [
            GruCell(store, f"{prefix}.l{i}", in_dim if i == 0 else hidden, hidden)
            for i in range(layers)
        ]

    def zero_state(self, batch: int) -> list[Tensor]:
        return [Tensor(np.zeros((batch, self.hidden), dtype=np.float32)) for _ in self.cells]

    def step(self, x: Tensor, hs: list[Tensor]) -> list[Tensor]:
        out = []
        inp = x
        for cell, h in zip(self.cells, hs):
            nh = cell.step(inp, h)
            out.append(nh)
            inp = nh
        return out


def masked_update(h_new: Tensor, h_old: Tensor, mask_col: np.ndarray) -> Tensor:
    """Freeze the state where mask is 0: h_old + m*(h_new - h_old)."""
    m = Tensor(mask_col.reshape(-1, 1))
    return T.add(h_old, T.mul(m, T.sub(h_new, h_old)))


class BiGruEncoder:
    """Bidirectional multi-layer GRU over a padded token batch.

    run() returns per-word outputs (B, T, 2H) built from the top layer's
    forward/backward concatenation, plus the final summary (B, 2H): the
    forward state at each row's last real token concatenated with the
    backward state at token 0. PAD positions freeze both directions.
    """

    def __init__(self, store: ParameterStore, prefix: str, in_dim: int, hidden: int, layers: int):
        self.hidden = hidden
        self.layers = layers
        self.fwd = [
            GruCell(store, f"{prefix}.l{i}.fwd", in_dim if i == 0 else 2 * hidden, hidden)
            for i in range(layers)
        ]
        self.bwd = [
            GruCell(store, f"{prefix}.l{i}.bwd", in_dim if i == 0 else 2 * hidden, hidden)
            for i in range(layers)
        ]

    def run(self, steps: list[Tensor], mask: np.ndarray, init: list[Tensor] | None = None):
        """steps: T tensors (B, in_dim); mask: (B, T) 0/1 floats.

        `init`, when given, holds one (B, H) tensor per layer used as the
        initial hidden state of both directions of that layer.
        """
        B = steps[0].data.shape[0]
        Tlen = len(steps)
        inputs = steps
        fwd_final = bwd_final = None
        outs = inputs
        for li in range(self.layers):
            fcell, bcell = self.fwd[li], self.bwd[li]
            hf = init[li] if init is not None else Tensor(np.zeros((B, self.hidden), dtype=np.float32))
            f_outs = []
            for t in range(Tlen):
                hf = masked_update(fcell.step(inputs[t], hf), hf, mask[:, t])
                f_outs.append(hf)
            hb = init[li] if init is not None else Tensor(np.zeros((B, self.hidden), dtype=np.float32))
            b_outs = [None] * Tlen
            for t in range(Tlen - 1, -1, -1):
                hb = masked_update(bcell.step(inputs[t], hb), hb, mask[:, t])
                b_outs[t] = hb
            outs = [T.concat([f_outs[t], b_outs[t]], axis=-1) for t in range(Tlen)]
            inputs = outs
            fwd_final, bwd_final = f_outs[-1], b_outs[0]
        summary = T.concat([fwd_final, bwd_final], axis=-1)
        word_outputs = T.stack(outs, axis=1)  # (B, T, 2H)
        return word_outputs, summary


class AdditiveAttention:
    """Bahdanau-style scoring: softmax_t( v . tanh(W_q q + W_k k_t) )."""

    def __init__(self, store: ParameterStore, prefix: str, query_dim: int, key_dim: int, attn_dim: int):
        self.wq = store.add(f"{prefix}.wq", (query_dim, attn_dim))
        self.wk = store.add(f"{prefix}.wk", (key_dim, attn_dim))
        self.v = store.add(f"{prefix}.v", (attn_dim,))

    def __call__(self, query: Tensor, keys: Tensor, values: Tensor, mask: np.ndarray | None = None):
        return additive_attention(query, keys, values, self, mask)


def additive_attention(query: Tensor, keys: Tensor, values: Tensor, params: AdditiveAttention,
                       mask: np.ndarray | None = None):
    """query (B, Hq); keys/values (B, T, Hk); returns (context (B, Hk), weights (B, T))."""
    if keys.data.ndim != 3 or keys.data.shape[1] == 0:
        raise T.ShapeError(f"additive_attention: keys must be (B, T>=1, H), got {keys.data.shape}")
    B, Tlen, Hk = keys.data.shape
    A = params.v.data.shape[0]
    qp = T.reshape(T.matmul(query, params.wq), (B, 1, A))
    kp = T.reshape(T.matmul(T.reshape(keys, (B * Tlen, Hk)), params.wk), (B, Tlen, A))
    scores = T.reduce_sum(T.mul(T.tanh(T.add(qp, kp)), params.v), axis=-1)  # (B, T)
    if mask is not None:
        # Large negative on PAD positions; rows that are fully masked fall
        # back to a uniform distribution, which callers mask out downstream.
        scores = T.add(scores, Tensor((mask - 1.0) * 1e9))
    weights = T.softmax(scores)
    ctx = T.reduce_sum(T.mul(T.reshape(weights, (B, Tlen, 1)), values), axis=1)
    return ctx, weights


def global_grad_norm(params: list[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def sgd_step(params: list[Tensor], lr: float, clip_norm: float) -> float:
    """Clip the global gradient norm, apply one SGD update, clear grads.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(params)
    scale = lr if clip_norm <= 0 or norm <= clip_norm else lr * clip_norm / (norm + 1e-12)
    for p in params:
        if p.grad is not None:
            p.data = p.data - np.float32(scale) * p.grad
            p.grad = None
    return norm
