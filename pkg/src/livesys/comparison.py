"""Comparison functions of classes K, K-infinity, L and KL.

Closed forms cover the gains produced by quadratic Lyapunov functions;
tables cover gains assembled from data. Every function evaluates
elementwise on floats or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np

K = "K"
KINF = "Kinf"
L = "L"
KL = "KL"
ZERO = "zero"


def _out(x, v):
    return float(v) if np.ndim(x) == 0 else v


class ComparisonFunction:
    kind: str

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Zero(ComparisonFunction):
    """The zero gain (allowed where a K-infinity gain is expected)."""

    kind: str = field(default=ZERO, init=False)

    def __call__(self, s):
        return _out(s, np.zeros_like(np.asarray(s, dtype=float)))

    def to_dict(self):
        return {"id": "zero"}


@dataclass(frozen=True)
class Power(ComparisonFunction):
    """``s -> a * s**p`` with ``a, p > 0`` (linear when ``p = 1``)."""

    a: float
    p: float = 1.0
    kind: str = field(default=KINF, init=False)

    def __post_init__(self):
        if not (self.a > 0 and self.p > 0):
            raise ValueError("power gain needs a > 0 and p > 0")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return _out(s, self.a * np.power(s, self.p))

    def inverse(self) -> "Power":
        return Power(self.a ** (-1.0 / self.p), 1.0 / self.p)

    def to_dict(self):
        return {"id": "power", "a": self.a, "p": self.p}


def linear(a: float) -> Power:
    return Power(a, 1.0)


@dataclass(frozen=True)
class ExpL(ComparisonFunction):
    """``t -> a * exp(-rate * t)``."""

    a: float
    rate: float
    kind: str = field(default=L, init=False)

    def __post_init__(self):
        if not (self.a > 0 and self.rate > 0):
            raise ValueError("exponential L-function needs a > 0 and rate > 0")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return _out(t, self.a * np.exp(-self.rate * t))

    def to_dict(self):
        return {"id": "exp", "a": self.a, "rate": self.rate}


@dataclass(frozen=True)
class ExpKL(ComparisonFunction):
    """``(r, t) -> a * r**p * exp(-rate * t)``."""

    a: float
    p: float
    rate: float
    kind: str = field(default=KL, init=False)

    def __post_init__(self):
        if not (self.a > 0 and self.p > 0 and self.rate > 0):
            raise ValueError("exponential KL-function needs positive parameters")

    def __call__(self, r, t):
        r = np.asarray(r, dtype=float)
        t = np.asarray(t, dtype=float)
        v = self.a * np.power(r, self.p) * np.exp(-self.rate * t)
        return float(v) if v.ndim == 0 else v

    def time_to(self, eps: float, r: float) -> float:
        """Smallest ``t >= 0`` with ``beta(r, t) <= eps``."""
        if eps <= 0:
            raise ValueError("eps must be positive")
        top = self.a * r ** self.p
        return 0.0 if top <= eps else math.log(top / eps) / self.rate

    def to_dict(self):
        return {"id": "exp_kl", "a": self.a, "p": self.p, "rate": self.rate}


@dataclass(frozen=True)
class PiecewiseLinearK(ComparisonFunction):
    """Interpolating table through ``(0, 0)`` with a linear tail past the last knot.

    ``ys`` must be strictly increasing (K) and the tail slope positive, which
    makes the function K-infinity.
    """

    xs: Tuple[float, ...]
    ys: Tuple[float, ...]
    tail_slope: float
    kind: str = field(default=KINF, init=False)

    def __post_init__(self):
        xs = tuple(float(x) for x in self.xs)
        ys = tuple(float(y) for y in self.ys)
        if len(xs) != len(ys) or len(xs) < 2 or xs[0] != 0.0 or ys[0] != 0.0:
            raise ValueError("K table needs matching knots starting at (0, 0)")
        if any(b <= a for a, b in zip(xs, xs[1:])) or any(b <= a for a, b in zip(ys, ys[1:])):
            raise ValueError("K table knots must be strictly increasing")
        if not self.tail_slope > 0:
            raise ValueError("K-infinity tail needs positive slope")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        v = np.interp(s, self.xs, self.ys)
        tail = s > self.xs[-1]
        v = np.where(tail, self.ys[-1] + self.tail_slope * (s - self.xs[-1]), v)
        return _out(s, v)

    def inverse(self) -> "PiecewiseLinearK":
        return PiecewiseLinearK(self.ys, self.xs, 1.0 / self.tail_slope)

    def to_dict(self):
        return {"id": "pl_k", "xs": list(self.xs), "ys": list(self.ys),
                "tail_slope": self.tail_slope}


@dataclass(frozen=True)
class MaxGain(ComparisonFunction):
    """Pointwise maximum of K-infinity gains (used to merge gains of several properties)."""

    parts: Tuple[ComparisonFunction, ...]
    kind: str = field(default=KINF, init=False)

    def __call__(self, s):
        vals = [np.asarray(p(s), dtype=float) for p in self.parts]
        return _out(s, np.maximum.reduce(vals))

    def to_dict(self):
        return {"id": "max", "parts": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True)
class SumGain(ComparisonFunction):
    parts: Tuple[ComparisonFunction, ...]
    kind: str = field(default=KINF, init=False)

    def __call__(self, s):
        vals = [np.asarray(p(s), dtype=float) for p in self.parts]
        return _out(s, np.sum(vals, axis=0))

    def to_dict(self):
        return {"id": "sum", "parts": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True)
class LTable(ComparisonFunction):
    """Strictly decreasing positive knots ``(ts, vals)`` with ``ts[0] = 0``.

    Between knots the value is interpolated linearly in ``log(value)``
    (piecewise exponential). Past the last knot it keeps decaying at the
    rate of the last interval (or ``tail_rate`` when given).
    """

    ts: Tuple[float, ...]
    vals: Tuple[float, ...]
    tail_rate: float | None = None
    kind: str = field(default=L, init=False)

    def __post_init__(self):
        ts = tuple(float(t) for t in self.ts)
        vals = tuple(float(v) for v in self.vals)
        if len(ts) != len(vals) or len(ts) < 1 or ts[0] != 0.0:
            raise ValueError("L table needs knots starting at t = 0")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("L table times must be strictly increasing")
        if any(v <= 0 for v in vals) or any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValueError("L table values must be positive and strictly decreasing")
        rate = self.tail_rate
        if rate is None:
            rate = 1.0 if len(ts) == 1 else \
                math.log(vals[-2] / vals[-1]) / (ts[-1] - ts[-2])
        if not rate > 0:
            raise ValueError("L table tail rate must be positive")
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "vals", vals)
        object.__setattr__(self, "tail_rate", float(rate))
        object.__setattr__(self, "_logs", np.log(np.asarray(vals)))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        v = np.exp(np.interp(t, self.ts, self._logs))
        # exp(log(.)) can miss knot values by an ulp; keep within the bracketing knots
        vals = np.asarray(self.vals)
        i = np.clip(np.searchsorted(self.ts, t, side="right") - 1, 0, len(vals) - 1)
        j = np.minimum(i + 1, len(vals) - 1)
        v = np.clip(v, vals[j], vals[i])
        v = np.where(t == np.asarray(self.ts)[i], vals[i], v)
        tail = t > self.ts[-1]
        v = np.where(tail, self.vals[-1] * np.exp(-self.tail_rate * np.maximum(t - self.ts[-1], 0.0)), v)
        return _out(t, v)

    def to_dict(self):
        return {"id": "l_table", "ts": list(self.ts), "vals": list(self.vals),
                "tail_rate": self.tail_rate}


@dataclass(frozen=True, eq=False)
class KLTable(ComparisonFunction):
    """KL function from per-radius L-tables ``rows[i]`` at radii ``r_grid[i]``.

    Evaluation follows the sup-over-smaller-radii construction:
    ``beta(r, t) = max_{j <= i} rows[j](t)`` where ``r_grid[i]`` is the
    smallest grid radius ``>= r``. Inside the grid every value is capped by
    ``2 * sigma(r)``, which keeps ``beta <= 2 sigma`` between radii and makes
    the function vanish at ``r = 0``; above the last radius the last row is
    scaled by ``sigma(r) / sigma(r_max)``.
    """

    r_grid: Tuple[float, ...]
    rows: Tuple[LTable, ...]
    sigma: ComparisonFunction
    info: Dict = field(default_factory=dict)
    kind: str = field(default=KL, init=False)

    def __post_init__(self):
        r = tuple(float(x) for x in self.r_grid)
        if len(r) != len(self.rows) or not r or r[0] <= 0:
            raise ValueError("KL table needs one row per positive radius")
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError("KL table radii must be strictly increasing")
        object.__setattr__(self, "r_grid", r)

    def _row_envelope(self, i: int, t: np.ndarray) -> np.ndarray:
        return np.maximum.reduce([np.asarray(self.rows[j](t), dtype=float) for j in range(i + 1)])

    def __call__(self, r, t):
        r_arr, t_arr = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
        flat_r, flat_t = r_arr.ravel(), t_arr.ravel()
        out = np.zeros_like(flat_r)
        idx = np.searchsorted(self.r_grid, flat_r, side="left")
        n = len(self.r_grid)
        for i in np.unique(idx):
            sel = idx == i
            rs, ts = flat_r[sel], flat_t[sel]
            if i >= n:
                env = self._row_envelope(n - 1, ts)
                scale = np.asarray(self.sigma(rs)) / float(self.sigma(self.r_grid[-1]))
                out[sel] = env * np.maximum(scale, 1.0)
                continue
            env = self._row_envelope(int(i), ts)
            out[sel] = np.minimum(env, 2.0 * np.asarray(self.sigma(rs), dtype=float))
        out = np.where(flat_r <= 0.0, 0.0, out)
        out = out.reshape(r_arr.shape)
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        return {"id": "kl_table", "r_grid": list(self.r_grid),
                "rows": [row.to_dict() for row in self.rows], "sigma": self.sigma.to_dict()}


@dataclass(frozen=True)
class ScaledComposition(ComparisonFunction):
    """``s -> outer(scale * inner(s))`` for K-infinity ``outer`` and ``inner``."""

    outer: ComparisonFunction
    inner: ComparisonFunction
    scale: float = 1.0
    kind: str = field(default=KINF, init=False)

    def __call__(self, s):
        return _out(s, np.asarray(self.outer(self.scale * np.asarray(self.inner(s), dtype=float))))

    def to_dict(self):
        return {"id": "scaled", "outer": self.outer.to_dict(), "inner": self.inner.to_dict(),
                "scale": self.scale}


@dataclass(frozen=True)
class DecayComposition(ComparisonFunction):
    """KL function ``(r, t) -> outer(decay(t) * inner(r))``.

    This is the shape of the decay estimate obtained from a Lyapunov
    sandwich: ``inner`` bounds V from above, ``outer`` inverts its lower
    bound and ``decay`` is an L-function.
    """

    outer: ComparisonFunction
    inner: ComparisonFunction
    decay: ComparisonFunction
    kind: str = field(default=KL, init=False)

    def __call__(self, r, t):
        v = np.asarray(self.outer(np.asarray(self.decay(t), dtype=float) *
                                  np.asarray(self.inner(r), dtype=float)), dtype=float)
        return float(v) if v.ndim == 0 else v

    def time_to(self, eps: float, r: float) -> float:
        """Smallest ``t`` with ``beta(r, t) <= eps`` (exact for an exponential decay)."""
        if eps <= 0:
            raise ValueError("eps must be positive")
        if float(self(r, 0.0)) <= eps:
            return 0.0
        if isinstance(self.decay, ExpL) and hasattr(self.outer, "inverse"):
            target = float(self.outer.inverse()(eps))
            return max(math.log(self.decay.a * float(self.inner(r)) / target) / self.decay.rate, 0.0)
        lo, hi = 0.0, 1.0
        while float(self(r, hi)) > eps:
            lo, hi = hi, 2.0 * hi
            if hi > 1e9:
                raise ValueError("decay does not reach eps")
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if float(self(r, mid)) > eps else (lo, mid)
        return hi

    def to_dict(self):
        return {"id": "decay_kl", "outer": self.outer.to_dict(), "inner": self.inner.to_dict(),
                "decay": self.decay.to_dict()}


def from_dict(d: dict) -> ComparisonFunction:
    """Inverse of ``to_dict`` for every function in this module."""
    kind = d["id"]
    if kind == "zero":
        return Zero()
    if kind == "power":
        return Power(d["a"], d["p"])
    if kind == "exp":
        return ExpL(d["a"], d["rate"])
    if kind == "exp_kl":
        return ExpKL(d["a"], d["p"], d["rate"])
    if kind == "pl_k":
        return PiecewiseLinearK(tuple(d["xs"]), tuple(d["ys"]), d["tail_slope"])
    if kind == "max":
        return MaxGain(tuple(from_dict(p) for p in d["parts"]))
    if kind == "sum":
        return SumGain(tuple(from_dict(p) for p in d["parts"]))
    if kind == "scaled":
        return ScaledComposition(from_dict(d["outer"]), from_dict(d["inner"]), d["scale"])
    if kind == "decay_kl":
        return DecayComposition(from_dict(d["outer"]), from_dict(d["inner"]), from_dict(d["decay"]))
    if kind == "l_table":
        return LTable(tuple(d["ts"]), tuple(d["vals"]), d["tail_rate"])
    if kind == "kl_table":
        return KLTable(tuple(d["r_grid"]), tuple(from_dict(r) for r in d["rows"]),
                       from_dict(d["sigma"]))
    raise ValueError(f"unknown comparison function id {kind!r}")


def check_class(fn: ComparisonFunction, r_grid: Sequence[float], t_grid: Sequence[float] = (),
                rtol: float = 1e-12) -> Tuple[bool, list]:
    """Monotonicity/zero checks of ``fn`` on grids; returns ``(ok, problems)``."""
    problems = []
    r = np.sort(np.asarray(r_grid, dtype=float))
    if fn.kind in (K, KINF, ZERO):
        v = np.asarray(fn(r), dtype=float)
        if float(fn(0.0)) != 0.0:
            problems.append("nonzero at 0")
        if fn.kind != ZERO and np.any(np.diff(v) <= 0):
            problems.append("not strictly increasing")
    elif fn.kind == L:
        v = np.asarray(fn(r), dtype=float)
        if np.any(np.diff(v) >= 0) or np.any(v <= 0):
            problems.append("not strictly decreasing and positive")
    elif fn.kind == KL:
        t = np.sort(np.asarray(t_grid, dtype=float))
        R, T = np.meshgrid(r, t, indexing="ij")
        V = np.asarray(fn(R, T), dtype=float)
        if np.any(np.diff(V, axis=0) < -rtol * np.abs(V[1:])):
            problems.append("decreasing in r")
        if np.any(np.diff(V, axis=1) > rtol * np.abs(V[:, :-1])):
            problems.append("increasing in t")
        if np.any(np.asarray(fn(np.zeros_like(t), t)) != 0.0):
            problems.append("nonzero at r = 0")
    return not problems, problems
