"""ISS-Lyapunov functions and the generalized average dwell-time condition.

An exponential ISS-Lyapunov function decays at rate ``c`` along flows and
grows at most by the factor ``exp(-d)`` at jumps, whenever ``V(x)`` is
above the input threshold ``chi(|xi|)``. The dwell-time condition

    -d * N(t, s) - c * (t - s) <= ln h(t - s)   for all t >= s >= 0

limits how densely impulses may occur for that decay to win.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import comparison as cf
from .comparison import ComparisonFunction
from .core_state import LiveState
from .errors import DefinitionError, HypothesisError, ProbeError
from .flow_engine import ImpulseSchedule, LiveSystemDefinition, evolve
from .signals import Channel, Constant, InputSignal, InputValue
from .stability import Report, SampleCloud, check_iss

DEFAULT_DT = (1e-3, 1e-4, 1e-5)


@dataclass(frozen=True, eq=False)
class IssLyapunovFunction:
    """Candidate ISS-Lyapunov function with its comparison data.

    Parameters
    ----------
    V : callable
        ``V(state) >= 0``.
    psi1, psi2 : ComparisonFunction
        Sandwich ``psi1(|x|) <= V(x) <= psi2(|x|)``; ``psi1`` must have ``inverse()``
        for gain construction.
    chi : ComparisonFunction
        Input threshold of the implication conditions.
    dissipation, alpha : callable
        Flow rate and jump bound: ``dV <= -dissipation(V)``, ``V(g) <= alpha(V)``.
    rates : (c, d), optional
        Set for exponential functions, where ``dissipation(s) = c s`` and
        ``alpha(s) = exp(-d) s``.
    jump_max_form : bool
        Declares the stronger jump bound ``V(g(x, xi)) <= alpha(max(V(x), chi(|xi|)))``
        that holds without the threshold; it is what makes the gains of
        :func:`exponential_iss_gains` valid below the threshold.
    """

    V: Callable[[LiveState], float]
    psi1: ComparisonFunction
    psi2: ComparisonFunction
    chi: ComparisonFunction
    dissipation: Callable[[float], float]
    alpha: Callable[[float], float]
    rates: Optional[Tuple[float, float]] = None
    jump_max_form: bool = False

    @classmethod
    def exponential(cls, V, psi1, psi2, chi, c: float, d: float,
                    jump_max_form: bool = False) -> "IssLyapunovFunction":
        grow = math.exp(-d)
        return cls(V, psi1, psi2, chi, lambda s: c * s, lambda s: grow * s, (c, d), jump_max_form)

    def __call__(self, x: LiveState) -> float:
        return self.V(x)


def quadratic_form(P, exclude: Sequence[int] = ()) -> Callable[[LiveState], float]:
    """``V(x) = sum_j x_j^T P x_j`` over the agents of ``x`` not in ``exclude``.

    Every included block must have the size of ``P``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    s = P.shape[0]
    skip = frozenset(exclude)
    index_cache: Dict[Hashable, np.ndarray] = {}

    def V(x: LiveState) -> float:
        cfg = x.config
        idx = index_cache.get(cfg.id)
        if idx is None:
            parts = []
            for j, a in enumerate(cfg.agents):
                if a in skip:
                    continue
                if cfg.dims[j] != s:
                    raise DefinitionError(f"agent {a} has block size {cfg.dims[j]}, expected {s}")
                parts.append(np.arange(cfg.offsets[j], cfg.offsets[j + 1]))
            idx = np.concatenate(parts) if parts else np.zeros(0, dtype=np.intp)
            if len(index_cache) < 4096:
                index_cache[cfg.id] = idx
        X = x.data[idx].reshape(-1, s)
        return float(np.einsum("ij,jk,ik->", X, P, X))

    return V


def constant_input(xi: InputValue) -> InputSignal:
    """Constant signal whose value at every time is ``xi``."""
    channels = {a: Channel.single(Constant(xi[a])) for a in xi}
    default = getattr(xi, "_default", None)
    return InputSignal(channels, None if default is None else Channel.single(Constant(default)))


@dataclass(frozen=True)
class LieEstimate:
    value: float
    spread: float
    quotients: Tuple[float, ...]


def lie_derivative_estimate(sys: LiveSystemDefinition, V: Callable[[LiveState], float],
                            x: LiveState, u: InputSignal, dt_seq: Sequence[float] = DEFAULT_DT,
                            sched: ImpulseSchedule = ImpulseSchedule(),
                            substeps: int = 4) -> LieEstimate:
    """Forward-difference estimate of the derivative of ``V`` along the flow at ``x``.

    Each quotient ``(V(phi(dt)) - V(x)) / dt`` is first order in ``dt``;
    consecutive quotients (ratio of steps ``q``) are combined by Richardson
    extrapolation ``(q D(dt/q) - D(dt)) / (q - 1)``. ``value`` is the last
    extrapolate and ``spread`` the largest gap between consecutive ones.

    Raises
    ------
    ProbeError
        When an impulse falls inside ``(0, max(dt_seq)]``.
    """
    dts = sorted((float(d) for d in dt_seq), reverse=True)
    if not dts or dts[-1] <= 0:
        raise ValueError("dt_seq needs positive steps")
    if sched.count(0.0, dts[0]) > 0:
        raise ProbeError(f"impulse inside the probe window (0, {dts[0]}]; shrink dt")
    v0 = V(x)
    quots = []
    for dt in dts:
        traj = evolve(sys, sched, x, u, dt, step=dt / substeps)
        quots.append((V(traj.final_state) - v0) / dt)
    if len(quots) == 1:
        return LieEstimate(quots[0], 0.0, tuple(quots))
    extra = []
    for (d1, q1), (d2, q2) in zip(zip(dts, quots), zip(dts[1:], quots[1:])):
        ratio = d1 / d2
        extra.append((ratio * q2 - q1) / (ratio - 1.0))
    spread = max((abs(a - b) for a, b in zip(extra, extra[1:])), default=abs(quots[-1] - extra[-1]))
    return LieEstimate(extra[-1], spread, tuple(quots))


def verify_lyapunov_conditions(sys: LiveSystemDefinition, lf: IssLyapunovFunction,
                               states: Sequence[LiveState], inputs: Sequence[InputValue],
                               flow_tol: float = 1e-3, jump_tol: float = 1e-9,
                               dt_seq: Sequence[float] = DEFAULT_DT) -> Report:
    """Check the implication form of the Lyapunov conditions on samples.

    For every pair ``(x, xi)`` with ``V(x) >= chi(|xi|)``: the Lie derivative
    under the constant input ``xi`` is at most ``-dissipation(V(x))`` (up to
    ``flow_tol`` times ``max(1, V)``), and for every jump rule leaving ``x``'s
    configuration ``V(g(x, xi)) <= alpha(V(x))`` (up to ``jump_tol``). With
    ``jump_max_form`` the bound ``alpha(max(V, chi))`` is checked for all pairs.
    """
    viol = []
    checked = {"flow": 0, "jump": 0, "max_form": 0}
    rules_by_src: Dict[Hashable, list] = {}
    for (src, dst) in sys.jump_rules:
        rules_by_src.setdefault(src, []).append((src, dst))
    for i, x in enumerate(states):
        vx = lf(x)
        for j, xi in enumerate(inputs):
            thr = float(lf.chi(xi.norm()))
            active = vx >= thr
            if active:
                est = lie_derivative_estimate(sys, lf.V, x, constant_input(xi), dt_seq)
                checked["flow"] += 1
                bound = -float(lf.dissipation(vx))
                if est.value > bound + flow_tol * max(1.0, vx):
                    viol.append({"kind": "flow", "state": i, "input": j, "V": vx,
                                 "lie": est.value, "bound": bound})
            for key in rules_by_src.get(x.config.id, ()):
                post = sys.jump_rules[key](x, xi, xi)
                vp = lf(post)
                if active:
                    checked["jump"] += 1
                    lim = float(lf.alpha(vx))
                    if vp > lim + jump_tol * max(1.0, lim):
                        viol.append({"kind": "jump", "state": i, "input": j, "rule": repr(key),
                                     "V_pre": vx, "V_post": vp, "bound": lim})
                if lf.jump_max_form:
                    checked["max_form"] += 1
                    lim = float(lf.alpha(max(vx, thr)))
                    if vp > lim + jump_tol * max(1.0, lim):
                        viol.append({"kind": "jump_max_form", "state": i, "input": j,
                                     "rule": repr(key), "V_pre": vx, "V_post": vp, "bound": lim})
    return Report("lyapunov", not viol, tuple(viol), checked)


def sample_states_and_inputs(sys: LiveSystemDefinition, sched: ImpulseSchedule, x0: LiveState,
                             rng, n_configs: int = 3, radii: Sequence[float] = (0.5, 2.0),
                             per_radius: int = 2,
                             magnitudes: Sequence[float] = (0.0, 0.25, 1.0, 3.0)):
    """Random states of the first configurations visited and inputs of several sizes.

    Inputs carry a value on the channel of every agent present in those
    configurations and the next one, so every jump rule leaving a sampled
    configuration finds the arrival values it reads.
    """
    from .stability import ball_samples

    path = sys.config_path(x0.config.id, sched)
    states = []
    for cid in path[:n_configs]:
        cfg = sys.configurations[cid]
        for r in radii:
            states.extend(ball_samples(cfg, r, per_radius, rng)[1:])
    dims: Dict[int, int] = {}
    for cid in path[:n_configs + 1]:
        cfg = sys.configurations[cid]
        for a in cfg.agents:
            dims[a] = cfg.dim_of(a)
    inputs = []
    for m in magnitudes:
        vals = {}
        for a, dim in dims.items():
            v = rng.normal(dim)
            v = v / max(float(np.linalg.norm(v)), 1e-300)
            vals[a] = m * v
        inputs.append(InputValue(vals))
    return states, inputs


def count_impulses(sched: ImpulseSchedule, s: float, t: float) -> int:
    """``N(t, s)``: impulse times in the half-open interval ``(s, t]``."""
    if s > t:
        raise ValueError("count_impulses needs s <= t")
    return bisect_right(sched.times, t) - bisect_right(sched.times, s)


@dataclass(frozen=True, eq=False)
class GadtBudget:
    """Dwell-time budget ``h`` with a dominating L-function ``g_dom`` (``h <= g_dom``).

    ``log_h`` (optional) evaluates ``ln h`` directly, avoiding a rounding step.
    """

    h: Callable
    g_dom: ComparisonFunction
    log_h: Optional[Callable] = None
    grid: Tuple[float, ...] = field(default_factory=lambda: tuple(
        np.concatenate([[0.0], np.logspace(-6, 2.4, 400)]).tolist()))

    def __post_init__(self):
        if self.g_dom.kind != cf.L:
            raise DefinitionError("dominating function must be of class L")
        xs = np.asarray(self.grid)
        hv = np.asarray(self.h(xs), dtype=float)
        gv = np.asarray(self.g_dom(xs), dtype=float)
        if np.any(hv <= 0):
            raise DefinitionError("h must be positive")
        if np.any(hv > gv * (1 + 1e-12)):
            i = int(np.argmax(hv - gv))
            raise DefinitionError(f"h exceeds its dominating L-function at x={xs[i]}")
        ok, problems = cf.check_class(self.g_dom, xs)
        if not ok:
            raise DefinitionError(f"dominating function is not class L: {problems}")

    def ln(self, x):
        if self.log_h is not None:
            return self.log_h(x)
        return np.log(self.h(x))

    @property
    def peak(self) -> float:
        """``g_dom(0)``, the largest value of the dominating function."""
        return float(self.g_dom(0.0))


def exp_budget(a: float, rate: float) -> GadtBudget:
    """``h(x) = a * exp(-rate * x)``, its own dominating L-function."""
    fn = cf.ExpL(a, rate)
    la = math.log(a)
    return GadtBudget(fn, fn, lambda x: la - rate * np.asarray(x, dtype=float))


@dataclass(frozen=True)
class GadtReport:
    admissible: bool
    witness: Optional[dict]
    pairs_checked: int
    worst_margin: float

    def to_dict(self):
        return {"check": "gadt", "passed": self.admissible, "witness": self.witness,
                "pairs_checked": self.pairs_checked, "worst_margin": self.worst_margin}


def gadt_points(sched: ImpulseSchedule, horizon: float, grid: int = 201, t0: float = 0.0,
                delta: float = 1e-9) -> np.ndarray:
    """Candidate times: ``t0``, impulse times and ``delta`` before them, the horizon, a uniform grid."""
    imp = np.asarray([t for t in sched.times if t0 < t <= horizon])
    pts = np.concatenate([[t0, horizon], imp, imp - delta, np.linspace(t0, horizon, grid)])
    return np.unique(pts[pts >= t0])


def check_gadt(sched: ImpulseSchedule, c: float, d: float, budget: GadtBudget, horizon: float,
               grid: int = 201, t0: float = 0.0, delta: float = 1e-9,
               chunk: int = 2048) -> GadtReport:
    """Verify ``-d N(t, s) - c (t - s) <= ln h(t - s)`` on all candidate pairs ``s <= t``.

    The left side is piecewise constant in ``s`` and ``t`` between impulse
    times up to the continuous drift ``c (t - s)``, so its worst values sit at
    impulse times and just before them; those are always in the point set.

    Raises
    ------
    HypothesisError
        When ``d == 0``.
    """
    if d == 0:
        raise HypothesisError("the dwell-time theorem needs d != 0", "d != 0")
    pts = gadt_points(sched, horizon, grid, t0, delta)
    times = np.asarray(sched.times)
    counts = np.searchsorted(times, pts, side="right")
    worst = math.inf
    witness = None
    pairs = 0
    n = len(pts)
    for a in range(0, n, chunk):
        s = pts[a:a + chunk, None]
        cs = counts[a:a + chunk, None]
        t = pts[None, :]
        ct = counts[None, :]
        valid = t >= s
        gap = np.where(valid, t - s, 0.0)
        N = ct - cs
        lhs = -d * N - c * gap
        rhs = np.asarray(budget.ln(gap), dtype=float)
        margin = np.where(valid, rhs - lhs, np.inf)
        pairs += int(valid.sum())
        k = int(np.argmin(margin))
        i, j = np.unravel_index(k, margin.shape)
        if margin[i, j] < worst:
            worst = float(margin[i, j])
            if worst < 0 and witness is None:
                witness = {"s": float(s[i, 0]), "t": float(t[0, j]), "N": int(N[i, j]),
                           "lhs": float(lhs[i, j]), "rhs": float(rhs[i, j])}
    return GadtReport(worst >= 0, witness, pairs, worst)


def exponential_iss_gains(lf: IssLyapunovFunction, budget: GadtBudget
                          ) -> Tuple[ComparisonFunction, ComparisonFunction]:
    """Uniform ISS gains over all schedules satisfying the dwell-time condition.

    Along a run, while ``V`` stays above ``mu = chi(|u|)`` it obeys
    ``V(t) <= exp(-d N - c (t - s)) V(s) <= h(t - s) V(s)``. With the
    max-form jump bound a run that was below ``mu`` re-enters the region
    above it at a value of at most ``max(1, exp(-d)) mu``, hence

        V(t) <= max(g_dom(t) V(0), g_dom(0) max(1, exp(-d)) chi(|u|)),

    which gives ``beta(r, t) = psi1^-1(g_dom(t) psi2(r))`` and
    ``gamma(s) = psi1^-1(g_dom(0) max(1, exp(-d)) chi(s))``.

    Raises
    ------
    DefinitionError
        For a non-exponential function or one without the max-form jump bound.
    """
    if lf.rates is None:
        raise DefinitionError("gains need an exponential Lyapunov function")
    if not lf.jump_max_form:
        raise DefinitionError("gains need the max-form jump bound (jump_max_form=True)")
    _, d = lf.rates
    inv = lf.psi1.inverse()
    beta = cf.DecayComposition(inv, lf.psi2, budget.g_dom)
    gamma = cf.ScaledComposition(inv, lf.chi, budget.peak * max(1.0, math.exp(-d)))
    return beta, gamma


def uniform_iss_over_class(batteries: Mapping[str, Tuple[ImpulseSchedule, Callable[[], SampleCloud]]],
                           lf: IssLyapunovFunction, budget: GadtBudget, horizon: float,
                           lyapunov_report: Report, tol: float = 1e-4) -> Report:
    """One pair ``(beta, gamma)`` bounding trajectory batteries under every schedule.

    Every schedule must satisfy the dwell-time condition on ``[0, horizon]``
    and ``lyapunov_report`` must have passed; otherwise nothing is simulated.

    Raises
    ------
    HypothesisError
        Naming the first failing schedule (or the Lyapunov check).
    """
    if not lyapunov_report.passed:
        raise HypothesisError("Lyapunov conditions failed", "lyapunov",
                              {"violations": list(lyapunov_report.violations[:5])})
    c, d = lf.rates
    verdicts = {}
    for name, (sched, _) in batteries.items():
        rep = check_gadt(sched, c, d, budget, horizon)
        verdicts[name] = rep.to_dict()
        if not rep.admissible:
            raise HypothesisError(f"schedule {name!r} violates the dwell-time condition",
                                  "gadt", {"schedule": name, **(rep.witness or {})})
    beta, gamma = exponential_iss_gains(lf, budget)
    viol, worst = [], -math.inf
    per = {}
    for name, (_, build) in batteries.items():
        rep = check_iss(build(), beta, gamma, tol)
        per[name] = {"passed": rep.passed, "max_excess": rep.summary["max_excess"]}
        worst = max(worst, rep.summary["max_excess"])
        viol.extend(dict(v, schedule=name) for v in rep.violations)
    return Report("uniform_iss", not viol, tuple(viol),
                  {"worst_margin": -worst, "schedules": per, "gadt": verdicts,
                   "beta": beta.to_dict(), "gamma": gamma.to_dict()})
