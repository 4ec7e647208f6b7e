"""Counter-based random source shared by training, sampling and noise injection.

Every run owns one (or more) RandomSource instances. A draw is a pure
function of (seed, counter), so replaying a run with the same seed gives
bitwise-identical streams regardless of how draws interleave with other
libraries. Normals come from Box-Muller over the uniform stream.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    # Finalizer of the splitmix64 generator; uint64 arithmetic wraps mod 2^64.
    z = (x + _GOLDEN).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def hash_seed(*parts) -> int:
    """Fold integers/strings into a single 64-bit seed, order-sensitive."""
    acc = np.uint64(0)
    with np.errstate(over="ignore"):
        for p in parts:
            if isinstance(p, str):
                for b in p.encode("utf-8"):
                    acc = _splitmix64(np.uint64(acc) + np.uint64(b))
            else:
                acc = _splitmix64(np.uint64(acc) + np.uint64(int(p) & 0xFFFFFFFFFFFFFFFF))
    return int(acc)


class RandomSource:
    """Deterministic uniform/normal/categorical draws keyed by (seed, counter)."""

    def __init__(self, seed: int):
        self._seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        with np.errstate(over="ignore"):
            self._key = _splitmix64(np.array([self._seed], dtype=np.uint64))[0]
        self._counter = 0

    @property
    def seed(self) -> int:
        return int(self._seed)

    def _raw(self, n: int) -> np.ndarray:
        ctr = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            mixed = _splitmix64(ctr ^ self._key)
        return mixed

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in the half-open interval (0, 1]."""
        bits = self._raw(n) >> np.uint64(11)  # top 53 bits
        return (bits.astype(np.float64) + 1.0) * (2.0 ** -53)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        """float32 N(0, std^2) array of the given shape, via Box-Muller."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u1 = self.uniform(pairs)
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return (z * std).reshape(shape).astype(np.float32)

    def uniform_range(self, shape, low: float, high: float) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = self.uniform(n)
        return (low + (high - low) * u).reshape(shape).astype(np.float32)

    def integers(self, n: int, high: int) -> np.ndarray:
        """n ints uniform on [0, high). Uses rejection-free modulo (bias < 2^-50 for desk-scale high)."""
        if high <= 0:
            raise ValueError("high must be positive")
        return (self._raw(n) % np.uint64(high)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) via random-key argsort."""
        keys = self._raw(n)
        return np.argsort(keys, kind="stable")

    def categorical(self, probs: np.ndarray) -> np.ndarray:
        """Row-wise sample from (B, K) probability rows; returns (B,) int64."""
        probs = np.asarray(probs, dtype=np.float64)
        cdf = np.cumsum(probs, axis=-1)
        cdf /= cdf[:, -1:]
        u = self.uniform(probs.shape[0])
        return np.minimum(
            (cdf < u[:, None]).sum(axis=-1), probs.shape[-1] - 1
        ).astype(np.int64)

    def fork(self, *parts) -> "RandomSource":
        """Independent child stream keyed off this seed plus the given parts."""
        return RandomSource(hash_seed(int(self._seed), *parts))
