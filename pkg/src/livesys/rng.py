"""SplitMix64 random streams for reproducible sample clouds.

SplitMix64 is counter based: draw ``i`` of a stream seeded with ``s`` is
``mix(s + (i + 1) * GAMMA)``, so whole blocks are generated with vectorized
uint64 arithmetic and any implementation reproduces the exact sequence.
"""

from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Stateful SplitMix64 stream.

    >>> SplitMix64(0).next_u64()
    16294208416658607535
    """

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self._state) + steps * GAMMA
            out = _mix(z)
        self._state = (self._state + n * int(GAMMA)) & _MASK
        return out

    def next_u64(self) -> int:
        return int(self.u64(1)[0])

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None):
        """Uniform on ``[lo, hi)`` from the top 53 bits of each draw."""
        n = 1 if size is None else int(np.prod(size))
        frac = (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        vals = lo + (hi - lo) * frac
        return float(vals[0]) if size is None else vals.reshape(size)

    def normal(self, size=None):
        """Standard normals by the Box-Muller transform (two uniforms per draw)."""
        n = 1 if size is None else int(np.prod(size))
        u = self.uniform(size=(2, n))
        z = np.sqrt(-2.0 * np.log1p(-u[0])) * np.cos(2.0 * np.pi * u[1])
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, lo: int, hi: int, size=None):
        """Integers in ``[lo, hi)``."""
        n = 1 if size is None else int(np.prod(size))
        span = hi - lo
        if span <= 0:
            raise ValueError("empty integer range")
        vals = lo + np.floor(self.uniform(size=n) * span).astype(np.int64)
        return int(vals[0]) if size is None else vals.reshape(size)

    def spawn(self, stream: int) -> "SplitMix64":
        """Independent child stream keyed by ``stream``."""
        with np.errstate(over="ignore"):
            seed = int(_mix(np.array([self._state ^ (int(stream) * 0xD1B54A32D192ED03 & _MASK)],
                                     dtype=np.uint64))[0])
        return SplitMix64(seed)


def random_hurwitz(rng: SplitMix64, s: int, skew_scale: float = 1.0) -> np.ndarray:
    """Random Hurwitz matrix ``-(M^T M + I) + K`` with ``K`` skew-symmetric.

    The symmetric part is at most ``-I``, so every eigenvalue has real part <= -1.
    """
    M = rng.normal((s, s))
    W = rng.normal((s, s))
    K = skew_scale * (W - W.T) / 2.0
    return -(M.T @ M + np.eye(s)) + K
