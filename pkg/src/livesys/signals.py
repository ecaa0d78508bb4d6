"""Piecewise input signals with per-agent channels.

A channel is a finite list of pieces on ``[0, inf)``. Piece ``i`` starts at
``breaks[i]`` and is right-continuous there unless ``left_owned[i]`` is set,
in which case the value *at* ``breaks[i]`` still belongs to piece ``i - 1``.
The left-owned flag is what concatenation produces: the first signal keeps
the closed interval ``[0, t]``.

Segment kinds with an exact sup-norm: :class:`Constant`, :class:`Affine`,
:class:`ExpDecay`. :class:`Sampled` (zero-order hold lookup) reports the
max over the samples it holds on the queried interval.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError

INF = math.inf


def _vec(v) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=float)).reshape(-1)
    arr.flags.writeable = False
    return arr


def _norm(v: np.ndarray) -> float:
    return math.sqrt(float(np.dot(v, v)))


class Segment:
    """A continuous vector-valued function of absolute time."""

    dim: int

    def value(self, s: float) -> np.ndarray:
        raise NotImplementedError

    def left_value(self, s: float) -> np.ndarray:
        return self.value(s)

    def sup_norm(self, lo: float, hi: float) -> float:
        """Sup of the Euclidean norm on ``[lo, hi]`` (``hi`` may be ``inf``)."""
        raise NotImplementedError

    def shifted(self, tau: float) -> "Segment":
        """Segment ``s -> self(s + tau)``."""
        raise NotImplementedError

    def internal_breaks(self) -> Tuple[float, ...]:
        return ()


@dataclass(frozen=True, eq=False)
class Constant(Segment):
    level: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "level", _vec(self.level))

    @property
    def dim(self):
        return self.level.shape[0]

    def value(self, s):
        return self.level

    def sup_norm(self, lo, hi):
        return _norm(self.level)

    def shifted(self, tau):
        return self


@dataclass(frozen=True, eq=False)
class Affine(Segment):
    """``offset + slope * (s - origin)``."""

    offset: np.ndarray
    slope: np.ndarray
    origin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "offset", _vec(self.offset))
        object.__setattr__(self, "slope", _vec(self.slope))
        if self.offset.shape != self.slope.shape:
            raise ValueError("affine offset and slope must have equal length")

    @property
    def dim(self):
        return self.offset.shape[0]

    def value(self, s):
        return self.offset + self.slope * (s - self.origin)

    def sup_norm(self, lo, hi):
        # the norm of an affine map is convex: the sup sits at an endpoint
        if hi == INF:
            return INF if np.any(self.slope != 0.0) else _norm(self.offset)
        return max(_norm(self.value(lo)), _norm(self.value(hi)))

    def shifted(self, tau):
        return Affine(self.offset, self.slope, self.origin - tau)


@dataclass(frozen=True, eq=False)
class ExpDecay(Segment):
    """``amplitude * exp(-rate * (s - origin))``; a negative rate grows."""

    amplitude: np.ndarray
    rate: float
    origin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "amplitude", _vec(self.amplitude))

    @property
    def dim(self):
        return self.amplitude.shape[0]

    def value(self, s):
        return self.amplitude * math.exp(-self.rate * (s - self.origin))

    def sup_norm(self, lo, hi):
        a = _norm(self.amplitude)
        if a == 0.0:
            return 0.0
        if self.rate >= 0.0:
            return a * math.exp(-self.rate * (lo - self.origin))
        if hi == INF:
            return INF
        return a * math.exp(-self.rate * (hi - self.origin))

    def shifted(self, tau):
        return ExpDecay(self.amplitude, self.rate, self.origin - tau)


@dataclass(frozen=True, eq=False)
class Sampled(Segment):
    """Zero-order hold through ``(times[j], values[j])``; ``values[0]`` before ``times[0]``."""

    times: Tuple[float, ...]
    values: np.ndarray

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1)
        if len(times) == 0 or vals.shape[0] != len(times):
            raise ValueError("sampled segment needs one value row per sample time")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("sample times must be strictly increasing")
        vals.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self):
        return self.values.shape[1]

    def value(self, s):
        j = max(bisect_right(self.times, s) - 1, 0)
        return self.values[j]

    def left_value(self, s):
        j = max(bisect_left(self.times, s) - 1, 0)
        return self.values[j]

    def sup_norm(self, lo, hi):
        j0 = max(bisect_right(self.times, lo) - 1, 0)
        j1 = len(self.times) if hi == INF else max(bisect_right(self.times, hi), j0 + 1)
        return max(_norm(v) for v in self.values[j0:j1])

    def shifted(self, tau):
        return Sampled(tuple(t - tau for t in self.times), self.values)

    def internal_breaks(self):
        return self.times


@dataclass(frozen=True, eq=False)
class Channel:
    """Piecewise signal ``[0, inf) -> R^m``."""

    breaks: Tuple[float, ...]
    segments: Tuple[Segment, ...]
    left_owned: Tuple[bool, ...]

    def __post_init__(self):
        breaks = tuple(float(b) for b in self.breaks)
        segs = tuple(self.segments)
        owned = tuple(bool(f) for f in self.left_owned)
        if not breaks or breaks[0] != 0.0:
            raise ValueError("a channel's first piece must start at 0")
        if len(segs) != len(breaks) or len(owned) != len(breaks):
            raise ValueError("breaks, segments and left_owned must align")
        for i in range(1, len(breaks)):
            if breaks[i] < breaks[i - 1]:
                raise ValueError("breaks must be nondecreasing")
            # a repeated break is a zero-length piece, legal only before a left-owned start
            if breaks[i] == breaks[i - 1] and not owned[i]:
                raise ValueError("zero-length piece must be followed by a left-owned piece")
        dims = {s.dim for s in segs}
        if len(dims) != 1:
            raise ValueError("all segments of a channel must share a dimension")
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "left_owned", owned)

    @classmethod
    def single(cls, segment: Segment) -> "Channel":
        return cls((0.0,), (segment,), (False,))

    @classmethod
    def piecewise(cls, pieces: Sequence[Tuple[float, Segment]]) -> "Channel":
        """Right-continuous channel from ``(start, segment)`` pairs."""
        return cls(tuple(p[0] for p in pieces), tuple(p[1] for p in pieces),
                   tuple(False for _ in pieces))

    @property
    def dim(self) -> int:
        return self.segments[0].dim

    def _piece_at(self, t: float) -> int:
        i = bisect_right(self.breaks, t) - 1
        if i >= 1 and self.left_owned[i] and self.breaks[i] == t:
            i -= 1
        return i

    def value(self, t: float) -> np.ndarray:
        if t < 0.0:
            raise ValueError("signals are defined on [0, inf)")
        return self.segments[self._piece_at(t)].value(t)

    def left_limit(self, t: float) -> np.ndarray:
        if t <= 0.0:
            raise ValueError("left limit needs t > 0")
        i = bisect_left(self.breaks, t) - 1
        return self.segments[i].left_value(t)

    def _pieces(self) -> Iterator[Tuple[float, float, Segment, bool]]:
        n = len(self.breaks)
        for i in range(n):
            end = self.breaks[i + 1] if i + 1 < n else INF
            owns_end = i + 1 < n and self.left_owned[i + 1]
            yield self.breaks[i], end, self.segments[i], owns_end

    def sup_norm(self, start: float = 0.0) -> float:
        """Pointwise sup of the Euclidean norm over ``[start, inf)``."""
        best = 0.0
        for lo, hi, seg, owns_end in self._pieces():
            a = max(lo, start)
            if a < hi or (a == hi and (lo == hi or owns_end)):
                best = max(best, seg.sup_norm(a, hi))
                if best == INF:
                    return INF
        return best

    def shift(self, tau: float) -> "Channel":
        if tau < 0.0:
            raise ValueError("shift needs tau >= 0")
        if tau == 0.0:
            return self
        first = self._piece_at(tau)
        breaks = [0.0]
        segs = [self.segments[first].shifted(tau)]
        owned = [False]
        for i in range(first + 1, len(self.breaks)):
            b = self.breaks[i] - tau
            breaks.append(max(b, 0.0))
            segs.append(self.segments[i].shifted(tau))
            owned.append(self.left_owned[i])
        return Channel(tuple(breaks), tuple(segs), tuple(owned))

    def breakpoints(self, lo: float, hi: float) -> Iterator[float]:
        """Discontinuity candidates in ``(lo, hi)``."""
        for b, seg in zip(self.breaks, self.segments):
            if lo < b < hi:
                yield b
            for ib in seg.internal_breaks():
                if lo < ib < hi:
                    yield ib


def concatenate_channels(c1: Channel, c2: Channel, t: float) -> Channel:
    if t <= 0.0:
        raise ValueError("concatenation time must be positive")
    if c1.dim != c2.dim:
        raise ValueError("cannot concatenate channels of different dimension")
    breaks, segs, owned = [], [], []
    for b, seg, own in zip(c1.breaks, c1.segments, c1.left_owned):
        if b < t or (b == t and not own):
            breaks.append(b)
            segs.append(seg)
            owned.append(own)
    for j, (b, seg, own) in enumerate(zip(c2.breaks, c2.segments, c2.left_owned)):
        breaks.append(b + t)
        segs.append(seg.shifted(-t))
        # the value at t itself stays with the first signal
        owned.append(True if j == 0 else own)
    return Channel(tuple(breaks), tuple(segs), tuple(owned))


class InputValue(Mapping):
    """Input value ``xi in U``: per-channel vectors at one instant.

    Missing channels fall back to ``default`` when set; otherwise reading them
    raises :class:`InputError`. Use :meth:`get` to probe without raising.
    """

    def __init__(self, values: Mapping[int, Sequence[float]] | None = None, default=None):
        self._values = {int(k): _vec(v) for k, v in (values or {}).items()}
        self._default = None if default is None else _vec(default)

    def __getitem__(self, agent):
        v = self.get(agent)
        if v is None:
            raise InputError(f"no input channel for agent {agent}")
        return v

    def get(self, agent, default=None):
        v = self._values.get(agent)
        if v is None:
            v = self._default
        return default if v is None else v

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def norm(self) -> float:
        vals = list(self._values.values())
        if self._default is not None:
            vals.append(self._default)
        return max((_norm(v) for v in vals), default=0.0)


class _SignalView(InputValue):
    """Lazy input value of a signal at time ``t`` (left limit when ``left``)."""

    def __init__(self, signal: "InputSignal", t: float, left: bool = False):
        self._signal = signal
        self._t = t
        self._left = left
        self._cache: Dict[int, Optional[np.ndarray]] = {}

    def get(self, agent, default=None):
        try:
            v = self._cache[agent]
        except KeyError:
            ch = self._signal.channel(agent)
            if ch is None:
                v = None
            elif self._left:
                v = ch.left_limit(self._t)
            else:
                v = ch.value(self._t)
            self._cache[agent] = v
        return default if v is None else v

    def __iter__(self):
        return iter(self._signal.channels)

    def __len__(self):
        return len(self._signal.channels)

    def norm(self):
        vals = [self[a] for a in self._signal.channels]
        if self._signal.default is not None:
            d = self._signal.default
            vals.append(d.left_limit(self._t) if self._left else d.value(self._t))
        return max((_norm(v) for v in vals), default=0.0)


@dataclass(frozen=True, eq=False)
class InputSignal:
    """Total input ``u = (u_i)``: one channel per agent index.

    ``default`` (optional) is the channel of every agent not listed, so all of
    the index set conceptually has an input while only referenced channels are
    materialized. Without a default, unlisted agents have no channel.
    """

    channels: Mapping[int, Channel]
    default: Optional[Channel] = None

    def __post_init__(self):
        object.__setattr__(self, "channels", {int(k): v for k, v in self.channels.items()})

    def channel(self, agent: int) -> Optional[Channel]:
        ch = self.channels.get(agent)
        return self.default if ch is None else ch

    def value(self, agent: int, t: float) -> Optional[np.ndarray]:
        ch = self.channel(agent)
        return None if ch is None else ch.value(t)

    def at(self, t: float) -> InputValue:
        return _SignalView(self, t)

    def left_at(self, t: float) -> InputValue:
        return _SignalView(self, t, left=True)

    def _all(self) -> Iterable[Channel]:
        yield from self.channels.values()
        if self.default is not None:
            yield self.default

    def breakpoints(self, lo: float, hi: float) -> Iterator[float]:
        for ch in self._all():
            yield from ch.breakpoints(lo, hi)


def zero_signal() -> InputSignal:
    return InputSignal({})


def constant_signal(value, agents: Iterable[int] | None = None) -> InputSignal:
    """Constant input; on every channel when ``agents`` is None."""
    ch = Channel.single(Constant(value))
    if agents is None:
        return InputSignal({}, default=ch)
    return InputSignal({a: ch for a in agents})


def step_channel(before, after, at: float) -> Channel:
    """Right-continuous step from ``before`` to ``after`` at time ``at``."""
    if at <= 0.0:
        return Channel.single(Constant(after))
    return Channel.piecewise([(0.0, Constant(before)), (at, Constant(after))])


def arrival_signal(arrivals: Mapping[int, Tuple[float, Sequence[float]]],
                   hold: float = 1.0, extra: Mapping[int, Channel] | None = None) -> InputSignal:
    """Input encoding entering agents' initial states on their own channels.

    ``arrivals[i] = (t_k, value)``: channel ``i`` is zero before ``t_k``, equals
    ``value`` on ``[t_k, t_k + hold)`` and is zero afterwards, so the
    right-continuous read ``u_i(t_k)`` returns ``value``.
    """
    if hold <= 0.0:
        raise ValueError("hold must be positive")
    channels: Dict[int, Channel] = dict(extra or {})
    for agent, (tk, value) in arrivals.items():
        v = _vec(value)
        zero = Constant(np.zeros_like(v))
        pieces = [] if tk <= 0.0 else [(0.0, zero)]
        pieces.append((max(tk, 0.0), Constant(v)))
        if hold != INF:
            pieces.append((max(tk, 0.0) + hold, zero))
        channels[int(agent)] = Channel.piecewise(pieces)
    return InputSignal(channels)


def concatenate(u1: InputSignal, u2: InputSignal, t: float) -> InputSignal:
    """``u1`` on ``[0, t]`` followed by ``u2(. - t)`` on ``(t, inf)``."""
    if t <= 0.0:
        raise ValueError("concatenation time must be positive")
    keys = set(u1.channels) | set(u2.channels)
    channels = {}
    for k in keys:
        c1, c2 = u1.channel(k), u2.channel(k)
        if c1 is None or c2 is None:
            raise InputError(f"channel {k} exists in only one of the concatenated signals")
        channels[k] = concatenate_channels(c1, c2, t)
    default = None
    if u1.default is not None and u2.default is not None:
        default = concatenate_channels(u1.default, u2.default, t)
    elif (u1.default is None) != (u2.default is None):
        raise InputError("concatenated signals disagree on the default channel")
    return InputSignal(channels, default)


def shift(u: InputSignal, tau: float) -> InputSignal:
    """Time-shifted signal ``s -> u(s + tau)``."""
    if tau < 0.0:
        raise ValueError("shift needs tau >= 0")
    if tau == 0.0:
        return u
    default = None if u.default is None else u.default.shift(tau)
    return InputSignal({k: c.shift(tau) for k, c in u.channels.items()}, default)


def left_limit(u: InputSignal, t: float) -> InputValue:
    """``lim_{s -> t-} u(s)`` on every channel."""
    if t <= 0.0:
        raise ValueError("left limit needs t > 0")
    values = {k: c.left_limit(t) for k, c in u.channels.items()}
    default = None if u.default is None else u.default.left_limit(t)
    return InputValue(values, default)


def signal_norm(u: InputSignal) -> float:
    """Sup over channels and time of the pointwise Euclidean norm; ``inf`` if unbounded."""
    return max((c.sup_norm(0.0) for c in u._all()), default=0.0)


def tail_norm(u: InputSignal, t: float) -> float:
    """Norm of the shifted signal ``u(t + .)``."""
    if t < 0.0:
        raise ValueError("tail norm needs t >= 0")
    return max((c.sup_norm(t) for c in u._all()), default=0.0)
