"""Flow map of a live system for a fixed impulse schedule.

Between impulse times the configuration is constant and the state follows
that configuration's vector field (fixed-step RK4). At an impulse time the
configuration changes and the jump rule maps the left-limit state, together
with the left-limit and right value of the input, into the new configuration.
"""

from __future__ import annotations

import csv
import io
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import (Callable, Dict, Hashable, Iterator, List, Mapping, Optional, Sequence,
                    TextIO, Tuple)

import numpy as np

from . import core_state
from .core_state import (EUCLIDEAN_OF_BLOCKS, ConfigTransitionMap, Configuration, LiveState,
                         difference_norm, format_config_id, pseudonorm, pseudonorm_rows)
from .errors import DefinitionError, NumericalError
from .numerics import rk4_step, snapped_grid
from .signals import InputSignal, InputValue, concatenate, shift

VectorField = Callable[[float, np.ndarray, InputValue], np.ndarray]
JumpFn = Callable[[LiveState, InputValue, InputValue], LiveState]

DEFAULT_STEP = 1e-3
DEFAULT_ESCAPE = 1e9


@dataclass(frozen=True)
class ImpulseSchedule:
    """Strictly increasing positive impulse times with their indices ``k``.

    Indices default to ``1, 2, ...``. A schedule shifted by ``t`` keeps the
    original indices, so arrival/departure tables keyed by ``k`` still apply.
    """

    times: Tuple[float, ...] = ()
    indices: Tuple[int, ...] = ()

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        indices = tuple(int(k) for k in self.indices) or tuple(range(1, len(times) + 1))
        if len(indices) != len(times):
            raise ValueError("one index per impulse time")
        if any(not math.isfinite(t) or t <= 0.0 for t in times):
            raise ValueError("impulse times must be finite and positive")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("impulse times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "indices", indices)

    @classmethod
    def explicit(cls, times: Sequence[float]) -> "ImpulseSchedule":
        return cls(tuple(times))

    @classmethod
    def periodic(cls, period: float, horizon: float, first: float | None = None) -> "ImpulseSchedule":
        """``first, first + period, ...`` up to ``horizon`` (``first`` defaults to ``period``)."""
        if period <= 0.0:
            raise ValueError("period must be positive")
        start = period if first is None else first
        n = int(math.floor((horizon - start) / period + 1e-9)) + 1 if horizon >= start else 0
        return cls(tuple(start + period * i for i in range(n)))

    @classmethod
    def log_shrinking(cls, horizon: float) -> "ImpulseSchedule":
        """``t_k = ln(k + 1)`` for ``k >= 1`` up to ``horizon``: gaps shrink like ``1/k``."""
        kmax = int(math.floor(math.exp(horizon))) - 1
        times = [math.log(k + 1.0) for k in range(1, kmax + 1)]
        times = [t for t in times if t <= horizon]
        return cls(tuple(times))

    def __len__(self):
        return len(self.times)

    def until(self, horizon: float) -> "ImpulseSchedule":
        n = bisect_right(self.times, horizon)
        return ImpulseSchedule(self.times[:n], self.indices[:n])

    def shifted(self, t: float) -> "ImpulseSchedule":
        """Schedule seen from time ``t``: times ``t_k - t`` for ``t_k > t``."""
        n = bisect_right(self.times, t)
        return ImpulseSchedule(tuple(s - t for s in self.times[n:]), self.indices[n:])

    def count(self, s: float, t: float) -> int:
        """Number of impulse times in ``(s, t]``."""
        return max(bisect_right(self.times, t) - bisect_right(self.times, s), 0)


SCHEDULE_KINDS = ("explicit", "periodic", "log-shrinking")


@dataclass(frozen=True)
class ScheduleSpec:
    """Recipe for an impulse schedule, materialized up to a horizon on demand.

    Schedules such as ``t_k = ln(k + 1)`` have ``e^T`` impulses before ``T``,
    so scenarios keep the recipe and only build the prefix they need.
    """

    kind: str
    period: float = 1.0
    first: Optional[float] = None
    times: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))

    def build(self, horizon: float) -> ImpulseSchedule:
        if self.kind == "periodic":
            return ImpulseSchedule.periodic(self.period, horizon, self.first)
        if self.kind == "log-shrinking":
            return ImpulseSchedule.log_shrinking(horizon)
        return ImpulseSchedule.explicit(self.times).until(horizon)

    def to_dict(self) -> dict:
        if self.kind == "periodic":
            d = {"kind": "periodic", "period": self.period}
            if self.first is not None:
                d["first"] = self.first
            return d
        if self.kind == "log-shrinking":
            return {"kind": "log-shrinking"}
        return {"kind": "explicit", "times": list(self.times)}


@dataclass(frozen=True, eq=False)
class LiveSystemDefinition:
    """Family of per-configuration systems glued by a transition map and jump rules.

    Parameters
    ----------
    configurations : mapping
        Registry ``id -> Configuration``.
    fields : mapping
        ``fields[id](t, x_flat, u_value) -> dx/dt`` for each configuration.
    transition : ConfigTransitionMap
        ``(current id, k) -> next id``.
    jump_rules : mapping
        ``jump_rules[(src, dst)](pre_state, u_left, u_at) -> post_state``.
    escape_threshold : float
        Pseudonorm level treated as finite-time escape.
    """

    configurations: Mapping[Hashable, Configuration]
    fields: Mapping[Hashable, VectorField]
    transition: ConfigTransitionMap = field(default_factory=ConfigTransitionMap.identity)
    jump_rules: Mapping[Tuple[Hashable, Hashable], JumpFn] = field(default_factory=dict)
    escape_threshold: float = DEFAULT_ESCAPE

    def __post_init__(self):
        missing = [q for q in self.configurations if q not in self.fields]
        if missing:
            raise DefinitionError(f"no vector field for configurations {missing!r}")
        if not self.escape_threshold > 0.0:
            raise DefinitionError("escape threshold must be positive")

    def with_escape(self, threshold: float) -> "LiveSystemDefinition":
        return LiveSystemDefinition(self.configurations, self.fields, self.transition,
                                    self.jump_rules, threshold)

    def config_path(self, start: Hashable, sched: ImpulseSchedule) -> List[Hashable]:
        """Configuration ids after each impulse of ``sched``, validating every jump rule."""
        path = []
        q = start
        for k in sched.indices:
            nxt = core_state.transition(self.transition, q, k, self.configurations)
            if (q, nxt) not in self.jump_rules:
                raise DefinitionError(
                    f"no jump rule for {format_config_id(q)} -> {format_config_id(nxt)} "
                    f"at impulse {k}")
            path.append(nxt)
            q = nxt
        return path


@dataclass(frozen=True, eq=False)
class Segment:
    """Flow on ``[start, end]`` inside one configuration."""

    start: float
    end: float
    config: Configuration
    times: np.ndarray
    states: np.ndarray

    @property
    def config_id(self):
        return self.config.id

    def __post_init__(self):
        self.times.flags.writeable = False
        self.states.flags.writeable = False

    def state(self, i: int) -> LiveState:
        return LiveState._wrap(self.config, self.states[i])

    def norms(self) -> np.ndarray:
        return _row_norms(self.config, self.states)


@dataclass(frozen=True)
class JumpRecord:
    t: float
    k: int
    pre: LiveState
    post: LiveState


COMPLETED = "completed"
BLOWUP = "blowup"


def _row_norms(config: Configuration, states: np.ndarray) -> np.ndarray:
    return pseudonorm_rows(config, states)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Result of :func:`evolve`.

    Consecutive segments share their boundary time: the last sample of a
    segment is the left-limit state before the jump, the first sample of the
    next segment is the post-jump state.
    """

    segments: Tuple[Segment, ...]
    jumps: Tuple[JumpRecord, ...]
    status: str
    horizon: float
    t_esc: Optional[float] = None

    @property
    def final_time(self) -> float:
        return self.segments[-1].end

    @property
    def final_state(self) -> LiveState:
        seg = self.segments[-1]
        return seg.state(len(seg.times) - 1)

    @property
    def blew_up(self) -> bool:
        return self.status == BLOWUP

    def state_at(self, t: float) -> LiveState:
        """State at grid time ``t`` (right-continuous at impulse times)."""
        for seg in reversed(self.segments):
            if seg.start <= t <= seg.end:
                i = int(np.searchsorted(seg.times, t))
                if i < len(seg.times) and seg.times[i] == t:
                    return seg.state(i)
                break
        raise KeyError(f"t={t!r} is not a grid point of this trajectory")

    def rows(self) -> Iterator[Tuple[float, LiveState]]:
        """Every recorded sample in time order, both sides of every jump included."""
        for seg in self.segments:
            for i in range(len(seg.times)):
                yield float(seg.times[i]), seg.state(i)

    def norm_series(self) -> Tuple[np.ndarray, np.ndarray]:
        """Stacked ``(t, pseudonorm)`` over all rows."""
        ts = np.concatenate([s.times for s in self.segments])
        ns = np.concatenate([s.norms() for s in self.segments])
        return ts, ns

    def sup_norm(self) -> float:
        return float(max(np.max(s.norms()) for s in self.segments))

    def write_csv(self, out: TextIO, lyapunov: Callable[[LiveState], float] | None = None,
                  extra: Mapping[str, Callable[[LiveState], float]] | None = None) -> None:
        """CSV with columns ``t, config_id, dim, pseudonorm[, V][, extra...]``."""
        extra = dict(extra or {})
        w = csv.writer(out, lineterminator="\n")
        header = ["t", "config_id", "dim", "pseudonorm"]
        if lyapunov is not None:
            header.append("V")
        header.extend(extra)
        w.writerow(header)
        for seg in self.segments:
            norms = seg.norms()
            cid = format_config_id(seg.config.id)
            for i, t in enumerate(seg.times):
                row = [repr(float(t)), cid, seg.config.dim, repr(float(norms[i]))]
                x = seg.state(i)
                if lyapunov is not None:
                    row.append(repr(float(lyapunov(x))))
                row.extend(repr(float(fn(x))) for fn in extra.values())
                w.writerow(row)

    def to_csv(self, **kwargs) -> str:
        buf = io.StringIO()
        self.write_csv(buf, **kwargs)
        return buf.getvalue()


def _interval_grid(a: float, b: float, cuts: Sequence[float], step: float) -> np.ndarray:
    knots = [a] + sorted(c for c in set(cuts) if a < c < b) + [b]
    parts = [snapped_grid(lo, hi, step) for lo, hi in zip(knots, knots[1:])]
    return np.concatenate([parts[0]] + [p[1:] for p in parts[1:]])


def evolve(sys: LiveSystemDefinition, sched: ImpulseSchedule, x0: LiveState, u: InputSignal,
           horizon: float, step: float = DEFAULT_STEP,
           sample_times: Sequence[float] = ()) -> Trajectory:
    """Flow of ``sys`` from ``x0`` under input ``u`` and impulse schedule ``sched``.

    Parameters
    ----------
    sys : LiveSystemDefinition
    sched : ImpulseSchedule
        Impulses after ``horizon`` are ignored; one at ``horizon`` is applied
        and ends the trajectory.
    x0 : LiveState
        Initial state; its configuration must be registered.
    u : InputSignal
    horizon : float
        Positive final time.
    step : float
        Maximal RK4 step. Impulse times, ``sample_times``, input breakpoints
        and the horizon are all grid points.
    sample_times : sequence of float
        Extra times that must be grid points (for restarts and prefix checks).

    Returns
    -------
    Trajectory
        ``status`` is ``"blowup"`` with ``t_esc`` the first grid time whose
        pseudonorm exceeds the escape threshold, ``"completed"`` otherwise.

    Raises
    ------
    DefinitionError
        Unregistered configuration, missing transition or jump rule.
    NumericalError
        Non-finite derivative below the escape threshold.
    """
    if not horizon > 0.0:
        raise ValueError("horizon must be positive")
    if not step > 0.0:
        raise ValueError("step must be positive")
    if x0.config.id not in sys.configurations:
        raise DefinitionError(f"initial configuration {x0.config.id!r} is not registered")
    sched = sched.until(horizon)
    path = sys.config_path(x0.config.id, sched)
    escape = sys.escape_threshold
    cuts = [t for t in sample_times if 0.0 < t < horizon]
    cuts.extend(u.breakpoints(0.0, horizon))
    cuts = sorted(set(cuts))

    def at(t):
        return u.at(t)

    segments: List[Segment] = []
    jumps: List[JumpRecord] = []
    config = x0.config
    x = np.array(x0.data, dtype=float)
    knots = [0.0] + list(sched.times)
    if knots[-1] < horizon:
        knots.append(horizon)

    for j in range(len(knots) - 1):
        a, b = knots[j], knots[j + 1]
        fld = sys.fields[config.id]
        lo = bisect_right(cuts, a)
        hi = bisect_right(cuts, b)
        grid = _interval_grid(a, b, cuts[lo:hi], step)
        states = np.empty((grid.shape[0], x.shape[0]))
        states[0] = x
        f = lambda t, y: fld(t, y, at(t))
        f_end = lambda t, y: fld(t, y, u.left_at(t))
        norm = (lambda y: math.sqrt(float(np.dot(y, y)))) if config.norm_kind == EUCLIDEAN_OF_BLOCKS \
            else (lambda y: pseudonorm(LiveState._wrap(config, y)))
        escaped_at = None
        if norm(x) > escape:
            escaped_at = 0
        else:
            for i in range(grid.shape[0] - 1):
                try:
                    x = rk4_step(f, grid[i], x, grid[i + 1] - grid[i], f_end)
                except NumericalError as exc:
                    raise NumericalError(f"{exc} in configuration {format_config_id(config.id)}",
                                         exc.t) from None
                states[i + 1] = x
                if norm(x) > escape:
                    escaped_at = i + 1
                    break
        if escaped_at is not None:
            n = escaped_at + 1
            segments.append(Segment(a, float(grid[escaped_at]), config, grid[:n], states[:n]))
            return Trajectory(tuple(segments), tuple(jumps), BLOWUP, horizon, float(grid[escaped_at]))
        segments.append(Segment(a, b, config, grid, states))
        if j < len(sched.times):
            k = sched.indices[j]
            target = path[j]
            pre = LiveState._wrap(config, x.copy())
            post = sys.jump_rules[(config.id, target)](pre, u.left_at(b), u.at(b))
            if post.config.id != target:
                raise DefinitionError(
                    f"jump rule at impulse {k} produced configuration {post.config.id!r}, "
                    f"expected {target!r}")
            jumps.append(JumpRecord(b, k, pre, post))
            config = post.config
            x = np.array(post.data, dtype=float)
    if jumps and jumps[-1].t == horizon:
        # impulse at the horizon: the post-jump state closes the trajectory
        segments.append(Segment(horizon, horizon, config, np.array([horizon]), np.array([x])))
        if pseudonorm(jumps[-1].post) > escape:
            return Trajectory(tuple(segments), tuple(jumps), BLOWUP, horizon, horizon)
    return Trajectory(tuple(segments), tuple(jumps), COMPLETED, horizon)


@dataclass(frozen=True, eq=False)
class AxiomSample:
    """One probe ``(x0, u, t, h)``; ``v`` is the alternative input for causality."""

    x0: LiveState
    u: InputSignal
    t: float
    h: float
    v: Optional[InputSignal] = None


@dataclass(frozen=True)
class AxiomReport:
    name: str
    passed: bool
    entries: Tuple[dict, ...]
    max_discrepancy: float = 0.0


def _alternative_input(u: InputSignal) -> InputSignal:
    from .signals import Channel, Constant

    def alt(c):
        return Channel.single(Constant(np.full(c.dim, 7.0)))

    default = None if u.default is None else alt(u.default)
    return InputSignal({k: alt(c) for k, c in u.channels.items()}, default)


def _prefix(traj: Trajectory, t: float) -> List[Tuple[float, Hashable, bytes]]:
    return [(s, x.config.id, x.data.tobytes()) for s, x in traj.rows() if s <= t]


def check_identity(sys: LiveSystemDefinition, sched: ImpulseSchedule,
                   samples: Sequence[AxiomSample], step: float = DEFAULT_STEP) -> AxiomReport:
    """``phi(0, x, u) = x`` exactly."""
    entries = []
    for i, smp in enumerate(samples):
        traj = evolve(sys, sched, smp.x0, smp.u, max(smp.t, step), step)
        ok = traj.state_at(0.0) == smp.x0
        entries.append({"sample": i, "ok": bool(ok)})
    return AxiomReport("identity", all(e["ok"] for e in entries), tuple(entries))


def check_causality(sys: LiveSystemDefinition, sched: ImpulseSchedule,
                    samples: Sequence[AxiomSample], step: float = DEFAULT_STEP) -> AxiomReport:
    """Inputs that agree on ``[0, t]`` give bit-identical trajectories on ``[0, t]``.

    The second input is ``u`` on ``[0, t]`` followed by ``v`` (a constant
    input unrelated to ``u`` when the sample has none); both runs continue to
    ``t + h`` so the differing tail is actually integrated.
    """
    entries = []
    for i, smp in enumerate(samples):
        v = smp.v if smp.v is not None else _alternative_input(smp.u)
        mixed = concatenate(smp.u, v, smp.t)
        a = evolve(sys, sched, smp.x0, smp.u, smp.t + smp.h, step, (smp.t,))
        b = evolve(sys, sched, smp.x0, mixed, smp.t + smp.h, step, (smp.t,))
        ok = _prefix(a, smp.t) == _prefix(b, smp.t)
        entries.append({"sample": i, "ok": bool(ok), "t": smp.t})
    return AxiomReport("causality", all(e["ok"] for e in entries), tuple(entries))


def check_cocycle(sys: LiveSystemDefinition, sched: ImpulseSchedule,
                  samples: Sequence[AxiomSample], tol: float = 1e-9,
                  step: float = DEFAULT_STEP) -> AxiomReport:
    """``phi(h, phi(t, x, u), u(t + .)) = phi(t + h, x, u)`` up to ``tol``.

    The restarted run uses the schedule shifted by ``t``. Samples whose base
    run escapes before ``t + h`` are reported as skipped.
    """
    entries = []
    worst = 0.0
    for i, smp in enumerate(samples):
        t, h = smp.t, smp.h
        base = evolve(sys, sched, smp.x0, smp.u, t + h, step, (t,))
        if base.blew_up:
            entries.append({"sample": i, "ok": True, "skipped": "blowup"})
            continue
        mid = base.state_at(t)
        rest = evolve(sys, sched.shifted(t), mid, shift(smp.u, t), h, step)
        if rest.blew_up:
            entries.append({"sample": i, "ok": False, "reason": "restart escaped"})
            continue
        x_direct, x_restart = base.final_state, rest.final_state
        if x_direct.config.id != x_restart.config.id:
            entries.append({"sample": i, "ok": False, "reason": "configuration mismatch",
                            "direct": x_direct.config.id, "restart": x_restart.config.id})
            continue
        d = difference_norm(x_direct, x_restart)
        worst = max(worst, d)
        entries.append({"sample": i, "ok": d <= tol, "discrepancy": d})
    return AxiomReport("cocycle", all(e["ok"] for e in entries), tuple(entries), worst)
