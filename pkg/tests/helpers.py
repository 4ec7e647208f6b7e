"""Shared test utilities: finite-difference gradient checking.

Gradients are verified against central differences computed through the
same float32 forward. Error is reported per parameter tensor as

    max_abs_diff / max(largest |fd| entry, 1.0)

i.e. normalized by the dominant gradient magnitude (with a floor of 1 so
all-zero/near-zero gradients are compared absolutely). float32 forward
noise at eps=1e-3 sits around 1e-5..1e-4 under this metric, comfortably
inside the 1e-3 budget, while any real backward bug (wrong term, missing
path, transposed matmul) shows up orders of magnitude above it.
"""

from __future__ import annotations

import numpy as np

from phredgan import tensor as T
from phredgan.tensor import Tensor


def fd_gradcheck(fn, params: dict[str, Tensor], eps: float = 1e-3) -> dict[str, float]:
    """Compare tape gradients of scalar-valued fn() against central differences.

    fn is re-evaluated under no tape for every +/- eps perturbation of every
    entry of every tensor in `params`. Returns per-name normalized errors.
    """
    with T.tape():
        loss = fn()
        T.backward(loss)
    analytic = {}
    for name, p in params.items():
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        p.grad = None

    errors = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        fd = np.zeros(flat.shape, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn().item()
            flat[i] = orig - eps
            down = fn().item()
            flat[i] = orig
            fd[i] = (up - down) / (2 * eps)
        fd = fd.reshape(p.data.shape)
        scale = max(float(np.abs(fd).max(initial=0.0)), 1.0)
        errors[name] = float(np.abs(analytic[name] - fd).max(initial=0.0)) / scale
    return errors


def assert_grads_close(fn, params: dict[str, Tensor], eps: float = 1e-3,
                       tol: float = 1e-3) -> dict[str, float]:
    errors = fd_gradcheck(fn, params, eps=eps)
    bad = {k: v for k, v in errors.items() if not (v <= tol)}
    assert not bad, f"finite-difference mismatch above {tol}: {bad}"
    return errors
