"""Empirical stability checkers and the constructive KL-majorant.

Checkers work on a :class:`SampleCloud`: observed pseudonorms of
trajectories together with the norms of their initial state and input.
The sup over continuous time is replaced by the sup over the recorded
samples; every comparison carries an absolute tolerance for that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import comparison as cf
from .comparison import ComparisonFunction, KLTable, LTable, PiecewiseLinearK
from .core_state import LiveState, pseudonorm
from .errors import HypothesisError
from .flow_engine import ImpulseSchedule, LiveSystemDefinition, Trajectory, evolve
from .signals import InputSignal, signal_norm, tail_norm

DEFAULT_TOL = 1e-6


# --- sample clouds ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SampleCloud:
    """Records ``(|x0|, |u|, t, |phi(t, x0, u)|, scenario)`` as parallel arrays.

    ``blowups`` lists ``(scenario, |x0|, |u|, t_esc)`` for runs that escaped;
    their samples are not part of the records.
    """

    x0_norm: np.ndarray
    u_norm: np.ndarray
    t: np.ndarray
    phi_norm: np.ndarray
    scenario: np.ndarray
    blowups: Tuple[Tuple[Hashable, float, float, float], ...] = ()

    def __post_init__(self):
        n = len(self.t)
        for name in ("x0_norm", "u_norm", "phi_norm", "scenario"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"cloud column {name} has the wrong length")

    def __len__(self):
        return len(self.t)

    @classmethod
    def empty(cls) -> "SampleCloud":
        z = np.zeros(0)
        return cls(z, z, z, z, np.zeros(0, dtype=object))

    @classmethod
    def from_trajectory(cls, traj: Trajectory, x0_norm: float, u_norm: float, scenario,
                        lattice: Sequence[float] | None = None,
                        norm: Callable[[LiveState], float] = pseudonorm) -> "SampleCloud":
        """Records of one run; at ``lattice`` times (grid points of ``traj``) or at every row."""
        if traj.blew_up:
            z = np.zeros(0)
            return cls(z, z, z, z, np.zeros(0, dtype=object),
                       ((scenario, float(x0_norm), float(u_norm), float(traj.t_esc)),))
        if lattice is None:
            rows = list(traj.rows())
            ts = np.array([r[0] for r in rows])
            ph = np.array([norm(r[1]) for r in rows]) if norm is not pseudonorm else \
                traj.norm_series()[1]
        else:
            ts = np.asarray(lattice, dtype=float)
            ph = np.array([norm(traj.state_at(t)) for t in ts])
        n = len(ts)
        sc = np.empty(n, dtype=object)
        sc[:] = [scenario] * n
        return cls(np.full(n, float(x0_norm)), np.full(n, float(u_norm)), ts, ph, sc)

    @staticmethod
    def merge(clouds: Iterable["SampleCloud"]) -> "SampleCloud":
        clouds = list(clouds)
        if not clouds:
            return SampleCloud.empty()
        cat = lambda name: np.concatenate([getattr(c, name) for c in clouds])
        blow = tuple(b for c in clouds for b in c.blowups)
        return SampleCloud(cat("x0_norm"), cat("u_norm"), cat("t"), cat("phi_norm"),
                           cat("scenario"), blow)

    def select(self, mask: np.ndarray) -> "SampleCloud":
        return SampleCloud(self.x0_norm[mask], self.u_norm[mask], self.t[mask],
                           self.phi_norm[mask], self.scenario[mask], self.blowups)


@dataclass(frozen=True)
class Report:
    name: str
    passed: bool
    violations: Tuple[dict, ...] = ()
    summary: Dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"check": self.name, "passed": self.passed, "violations": list(self.violations),
                "summary": self.summary}


def _violations(cloud: SampleCloud, bad: np.ndarray, bound: np.ndarray, limit: int = 50) -> List[dict]:
    out = []
    for i in np.flatnonzero(bad)[:limit]:
        out.append({"scenario": cloud.scenario[i], "t": float(cloud.t[i]),
                    "x0_norm": float(cloud.x0_norm[i]), "u_norm": float(cloud.u_norm[i]),
                    "observed": float(cloud.phi_norm[i]), "bound": float(bound[i])})
    return out


def _blowup_violations(cloud: SampleCloud, pred=lambda b: True) -> List[dict]:
    return [{"scenario": b[0], "x0_norm": b[1], "u_norm": b[2], "t_esc": b[3], "blowup": True}
            for b in cloud.blowups if pred(b)]


# --- ISS and its weaker relatives -------------------------------------------------------


def check_iss(cloud: SampleCloud, beta: ComparisonFunction, gamma: ComparisonFunction,
              tol: float = DEFAULT_TOL) -> Report:
    """``|phi| <= beta(|x0|, t) + gamma(|u|) + tol`` on every record; escapes fail."""
    bound = np.asarray(beta(cloud.x0_norm, cloud.t), dtype=float) + \
        np.asarray(gamma(cloud.u_norm), dtype=float)
    bad = cloud.phi_norm > bound + tol
    viol = _blowup_violations(cloud) + _violations(cloud, bad, bound)
    return Report("iss", not viol, tuple(viol),
                  {"records": len(cloud), "count": int(bad.sum()) + len(cloud.blowups),
                   "max_excess": float(np.max(cloud.phi_norm - bound, initial=-np.inf))})


def check_brs(cloud: SampleCloud, groups: Sequence[Tuple[float, float]],
              bound: ComparisonFunction | None = None) -> Report:
    """Bounded reachability: for each ``(C, tau)`` the sup of ``|phi|`` over
    ``|x0| <= C, |u| <= C, t <= tau`` is finite (and below ``bound(C)`` when given).

    A recorded escape with ``|x0|, |u| <= C`` and ``t_esc <= tau`` falsifies BRS.
    """
    viol, sups = [], []
    for C, tau in groups:
        m = (cloud.x0_norm <= C) & (cloud.u_norm <= C) & (cloud.t <= tau)
        sup = float(np.max(cloud.phi_norm[m], initial=0.0))
        sups.append({"C": C, "tau": tau, "sup": sup, "records": int(m.sum())})
        esc = _blowup_violations(cloud, lambda b: b[1] <= C and b[2] <= C and b[3] <= tau)
        for e in esc:
            e.update({"C": C, "tau": tau})
        viol.extend(esc)
        if not math.isfinite(sup):
            viol.append({"C": C, "tau": tau, "sup": sup})
        elif bound is not None and sup > float(bound(C)) + DEFAULT_TOL:
            viol.append({"C": C, "tau": tau, "sup": sup, "bound": float(bound(C))})
    return Report("brs", not viol, tuple(viol), {"groups": sups})


def check_uls(cloud: SampleCloud, sigma: ComparisonFunction, gamma: ComparisonFunction,
              r: float, tol: float = DEFAULT_TOL) -> Report:
    """``|phi| <= sigma(|x0|) + gamma(|u|) + tol`` for records inside the ball of radius ``r``."""
    m = (cloud.x0_norm <= r) & (cloud.u_norm <= r)
    sub = cloud.select(m)
    bound = np.asarray(sigma(sub.x0_norm), dtype=float) + np.asarray(gamma(sub.u_norm), dtype=float)
    bad = sub.phi_norm > bound + tol
    viol = _blowup_violations(cloud, lambda b: b[1] <= r and b[2] <= r) + _violations(sub, bad, bound)
    return Report("uls", not viol, tuple(viol), {"records": len(sub), "r": r})


TauOracle = Callable[[float, float], float]


def _tau(oracle: TauOracle, eps: float, r: float) -> float:
    try:
        tau = float(oracle(eps, r))
    except (ValueError, ArithmeticError) as exc:
        raise ValueError(f"tau oracle undefined at eps={eps}, r={r}: {exc}") from None
    if not math.isfinite(tau) or tau < 0:
        raise ValueError(f"tau oracle undefined at eps={eps}, r={r}")
    return tau


def check_uag(cloud: SampleCloud, gamma: ComparisonFunction, tau_oracle: TauOracle,
              pairs: Sequence[Tuple[float, float]], tol: float = DEFAULT_TOL) -> Report:
    """For each declared ``(eps, r)``: records with ``t >= tau(eps, r)`` in the ball satisfy
    ``|phi| <= eps + gamma(|u|) + tol``.

    Raises
    ------
    ValueError
        When the oracle is undefined for a requested pair.
    """
    viol, per = [], []
    g = np.asarray(gamma(cloud.u_norm), dtype=float)
    for eps, r in pairs:
        tau = _tau(tau_oracle, eps, r)
        m = (cloud.x0_norm <= r) & (cloud.u_norm <= r) & (cloud.t >= tau)
        bound = eps + g
        bad = m & (cloud.phi_norm > bound + tol)
        for v in _violations(cloud, bad, bound):
            v.update({"eps": eps, "r": r, "tau": tau})
            viol.append(v)
        per.append({"eps": eps, "r": r, "tau": tau, "records": int(m.sum())})
    viol = _blowup_violations(cloud) + viol
    return Report("uag", not viol, tuple(viol), {"pairs": per})


def check_ulim(cloud: SampleCloud, gamma: ComparisonFunction, tau_oracle: TauOracle,
               pairs: Sequence[Tuple[float, float]], tol: float = DEFAULT_TOL) -> Report:
    """For each ``(eps, r)`` and each scenario in the ball, some record with
    ``t <= tau(eps, r)`` satisfies ``|phi| <= eps + gamma(|u|) + tol``."""
    viol, per = [], []
    g = np.asarray(gamma(cloud.u_norm), dtype=float)
    scen = cloud.scenario
    for eps, r in pairs:
        tau = _tau(tau_oracle, eps, r)
        ball = (cloud.x0_norm <= r) & (cloud.u_norm <= r)
        good = ball & (cloud.t <= tau) & (cloud.phi_norm <= eps + g + tol)
        in_ball = set(scen[ball].tolist())
        witnessed = set(scen[good].tolist())
        missing = sorted(in_ball - witnessed, key=repr)
        for s in missing:
            viol.append({"scenario": s, "eps": eps, "r": r, "tau": tau})
        per.append({"eps": eps, "r": r, "tau": tau, "scenarios": len(in_ball)})
    viol = _blowup_violations(cloud) + viol
    return Report("ulim", not viol, tuple(viol), {"pairs": per})


@dataclass(frozen=True)
class ImpliedParameters:
    """Parameters of the weaker properties read off an ISS pair ``(beta, gamma)``."""

    sigma: Callable
    gamma: ComparisonFunction
    tau: TauOracle


def time_to_level(beta: ComparisonFunction, eps: float, r: float, t_cap: float = 1e6) -> float:
    """Smallest ``t`` with ``beta(r, t) <= eps`` (closed form when available, else bisection)."""
    if hasattr(beta, "time_to"):
        return beta.time_to(eps, r)
    if float(beta(r, 0.0)) <= eps:
        return 0.0
    hi = 1.0
    while float(beta(r, hi)) > eps:
        hi *= 2.0
        if hi > t_cap:
            raise ValueError("beta does not reach eps")
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if float(beta(r, mid)) > eps:
            lo = mid
        else:
            hi = mid
    return hi


def iss_implied_parameters(beta: ComparisonFunction, gamma: ComparisonFunction,
                           lattice: Sequence[float]) -> ImpliedParameters:
    """``sigma = beta(., 0)`` and a ``tau`` snapped up to the sample lattice.

    Snapping makes the ULIM existence claim checkable: the lattice time right
    after the true ``tau`` is a sample of every run.
    """
    lat = np.sort(np.asarray(lattice, dtype=float))

    def tau(eps, r):
        t = time_to_level(beta, eps, r)
        i = int(np.searchsorted(lat, t, side="left"))
        if i >= len(lat):
            raise ValueError("tau lies beyond the sample lattice")
        return float(lat[i])

    return ImpliedParameters(lambda s: beta(s, 0.0 * np.asarray(s, dtype=float)), gamma, tau)


def common_lattice(cloud: SampleCloud) -> np.ndarray:
    """Times recorded in every scenario of the cloud."""
    common = None
    for sc in sorted(set(cloud.scenario.tolist()), key=repr):
        ts = np.unique(cloud.t[cloud.scenario == sc])
        common = ts if common is None else np.intersect1d(common, ts)
    return np.zeros(0) if common is None else common


def check_hierarchy(cloud: SampleCloud, beta: ComparisonFunction, gamma: ComparisonFunction,
                    pairs: Sequence[Tuple[float, float]], r: float,
                    groups: Sequence[Tuple[float, float]], tol: float = DEFAULT_TOL) -> Dict[str, Report]:
    """ISS on ``cloud`` and the weaker properties with the parameters it implies.

    When the ISS report passes, the others must pass as well; pairs whose
    ``tau`` lies past the common sample lattice are dropped (and listed in
    the ISS summary) since no run can witness them.
    """
    iss = check_iss(cloud, beta, gamma, tol)
    implied = iss_implied_parameters(beta, gamma, common_lattice(cloud))
    usable, dropped = [], []
    for eps, rr in pairs:
        (usable if _defined(implied.tau, eps, rr) else dropped).append((eps, rr))
    iss.summary["dropped_pairs"] = dropped
    return {"iss": iss,
            "uag": check_uag(cloud, gamma, implied.tau, usable, tol),
            "ulim": check_ulim(cloud, gamma, implied.tau, usable, tol),
            "uls": check_uls(cloud, implied.sigma, gamma, r, tol),
            "brs": check_brs(cloud, groups)}


def combine_gains(*gains: ComparisonFunction) -> ComparisonFunction:
    """Single gain dominating all given ones (pointwise max)."""
    parts = tuple(g for g in gains if not isinstance(g, cf.Zero))
    if not parts:
        return cf.Zero()
    return parts[0] if len(parts) == 1 else cf.MaxGain(parts)


# --- convergent input, uniformly convergent state ---------------------------------------


def ball_samples(config, r: float, n: int, rng) -> List[LiveState]:
    """``n`` states of pseudonorm ``r`` plus the origin; ``rng`` is a SplitMix64 stream."""
    out = [LiveState.zeros(config)]
    for _ in range(n):
        v = rng.normal(config.dim)
        nv = pseudonorm(LiveState(config, v))
        if nv == 0.0:
            continue
        out.append(LiveState(config, r * v / nv))
    return out


def check_ciucs(sys: LiveSystemDefinition, sched: ImpulseSchedule, u: InputSignal,
                initial_states: Sequence[LiveState], times: Sequence[float], eps: float = 1e-3,
                step: float = 1e-2, input_eps: float | None = None) -> Report:
    """Uniform convergence of the state for an input with vanishing tail.

    Every initial state is evolved on a common time lattice; the report gives
    the sup of the pseudonorm over the initial states at each lattice time
    and the first lattice time after which that sup stays below ``eps``.
    The tail norm of ``u`` at the last lattice time is reported too; when it
    exceeds ``input_eps`` (default ``eps``) the hypothesis is flagged unmet.
    """
    times = np.asarray(sorted(times), dtype=float)
    horizon = float(times[-1])
    sups = np.zeros(len(times))
    escaped = []
    for j, x0 in enumerate(initial_states):
        traj = evolve(sys, sched, x0, u, horizon, step, tuple(times))
        if traj.blew_up:
            escaped.append({"sample": j, "t_esc": traj.t_esc})
            continue
        norms = np.array([pseudonorm(traj.state_at(t)) for t in times])
        sups = np.maximum(sups, norms)
    below = sups < eps
    conv_time = None
    if below[-1]:
        last_bad = np.flatnonzero(~below)
        conv_time = float(times[0] if last_bad.size == 0 else times[min(last_bad[-1] + 1, len(times) - 1)])
    tail = tail_norm(u, horizon)
    hyp_ok = tail <= (eps if input_eps is None else input_eps)
    passed = conv_time is not None and not escaped
    summary = {"eps": eps, "convergence_time": conv_time, "sup_final": float(sups[-1]),
               "input_tail_norm": tail, "hypothesis_met": bool(hyp_ok),
               "times": times.tolist(), "sup_norm": sups.tolist()}
    viol = tuple(escaped) if escaped else (() if passed else
                                           ({"reason": "no convergence below eps",
                                             "hypothesis_unmet": not hyp_ok},))
    return Report("ciucs", passed, viol, summary)


# --- KL-majorant -----------------------------------------------------------------------


def counterexample_g(r, t):
    """``r / (1 - t)`` when ``r >= 1`` and ``0 <= t < 1``, ``r * exp(-t)`` otherwise.

    Satisfies the decay and small-radius hypotheses of the majorant
    construction but is unbounded near ``(1, 1)``.
    """
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    first = (r >= 1.0) & (t >= 0.0) & (t < 1.0)
    with np.errstate(divide="ignore"):
        v = np.where(first, r / np.where(first, 1.0 - t, 1.0), r * np.exp(-t))
    return float(v) if v.ndim == 0 else v


def counterexample_tau(eps: float, r: float) -> float:
    """Decay time of :func:`counterexample_g`: ``g(s, t) <= eps`` for ``s <= r``, ``t >= tau``."""
    base = max(math.log(r / eps), 0.0) if r > 0 else 0.0
    return max(1.0, base) if r >= 1.0 else base


@dataclass(frozen=True)
class BoundednessProbe:
    """Grid probe for boundedness on bounded sets.

    The coarse grid maximum is refined ``depth`` times around the current
    argmax with offsets shrinking by ``refine`` per level. If the running
    maximum multiplies by at least ``growth`` at each of the last three
    levels, or exceeds ``ceiling``, the function is declared unbounded.
    """

    coarse: int = 65
    depth: int = 6
    refine: float = 10.0
    growth: float = 2.0
    ceiling: float = math.inf


def _probe_bounded(g, s_vals: np.ndarray, t_hi: float, probe: BoundednessProbe):
    ts = np.linspace(0.0, t_hi, probe.coarse)
    S, T = np.meshgrid(s_vals, ts, indexing="ij")
    V = np.asarray(g(S, T), dtype=float)
    i, j = np.unravel_index(int(np.argmax(V)), V.shape)
    best = (float(V[i, j]), float(S[i, j]), float(T[i, j]))
    levels = [best[0]]
    dt = t_hi / (probe.coarse - 1) if probe.coarse > 1 else t_hi
    s_top = float(s_vals.max())
    ds = s_top / max(len(s_vals) - 1, 1)
    offsets = np.arange(-9, 10, dtype=float)
    for m in range(1, probe.depth + 1):
        scale = probe.refine ** (-m)
        tt = np.clip(best[2] + offsets * dt * scale * 10.0 / 9.0, 0.0, t_hi)
        ss = np.clip(best[1] + offsets * ds * scale * 10.0 / 9.0, 0.0, s_top)
        S2, T2 = np.meshgrid(ss, tt, indexing="ij")
        V2 = np.asarray(g(S2, T2), dtype=float)
        a, b = np.unravel_index(int(np.argmax(V2)), V2.shape)
        if V2[a, b] > best[0]:
            best = (float(V2[a, b]), float(S2[a, b]), float(T2[a, b]))
        levels.append(best[0])
    unbounded = not math.isfinite(best[0]) or best[0] > probe.ceiling
    if len(levels) >= 4 and levels[-4] > 0:
        ratios = [levels[k] / levels[k - 1] for k in range(len(levels) - 3, len(levels))]
        unbounded = unbounded or all(q >= probe.growth for q in ratios)
    return unbounded, best, levels


def kl_majorant(g: Callable, sigma1: ComparisonFunction, delta: float, tau_oracle: TauOracle,
                r_grid: Sequence[float], s_eval: Sequence[float], t_eval: Sequence[float],
                probe: BoundednessProbe = BoundednessProbe(),
                max_levels: int = 200, check_post: bool = True) -> KLTable:
    """KL function ``beta >= g`` built by the dyadic-level construction.

    Parameters
    ----------
    g : callable
        ``g(s, t)``, vectorized over numpy arrays.
    sigma1, delta : K-infinity function and radius
        Small-radius bound ``g(s, t) <= sigma1(s)`` for ``s <= delta``.
    tau_oracle : callable
        ``tau(eps, r)`` with ``g(s, t) <= eps`` whenever ``s <= r`` and ``t >= tau``.
        May raise ``ValueError`` (or return ``inf``) where no such time is known.
    r_grid : sequence of float
        Positive radii of the table rows.
    s_eval, t_eval : sequences of float
        Evaluation grid used to probe the hypotheses and to verify ``g <= beta``.
    probe : BoundednessProbe
        Settings of the boundedness probe.

    Returns
    -------
    KLTable
        ``info`` holds the sigma knots, per-row level times and, where the
        oracle ran out, the time after which the row is only an extension.

    Raises
    ------
    HypothesisError
        ``hypothesis`` is ``"i"``, ``"ii"`` or ``"iii"``; ``witness`` holds
        the offending sample.
    """
    r_grid = np.unique(np.asarray(r_grid, dtype=float))
    if r_grid.size == 0 or r_grid[0] <= 0:
        raise ValueError("r_grid must hold positive radii")
    s_eval = np.unique(np.asarray(s_eval, dtype=float))
    t_eval = np.unique(np.asarray(t_eval, dtype=float))
    t_max = float(t_eval.max(initial=0.0))
    s_all = np.unique(np.concatenate([s_eval, r_grid, [0.0]]))

    # (ii) small radii
    small = s_all[s_all <= delta]
    if small.size:
        S, T = np.meshgrid(small, t_eval, indexing="ij")
        V = np.asarray(g(S, T), dtype=float)
        B = np.asarray(sigma1(S), dtype=float)
        bad = V > B
        if bad.any():
            a, b = np.unravel_index(int(np.argmax(V - B)), V.shape)
            raise HypothesisError("small-radius bound fails", "ii",
                                  {"s": float(S[a, b]), "t": float(T[a, b]),
                                   "value": float(V[a, b]), "bound": float(B[a, b])})

    # (iii) then the uniform bound xi(r) = sup_{s <= r, t >= 0} g, radius by radius
    xi = np.zeros(len(r_grid))
    for i, r in enumerate(r_grid):
        s_vals = s_all[s_all <= r]
        # past tau(1, r) the decay hypothesis bounds g by 1; before it, probe
        if _defined(tau_oracle, 1.0, r):
            t_hi, cap = max(_tau(tau_oracle, 1.0, r), 1e-12), 1.0
        else:
            t_hi, cap = max(t_max, 1e-12), 0.0
        unbounded, best, levels = _probe_bounded(g, s_vals, t_hi, probe)
        if unbounded:
            raise HypothesisError(
                "g is unbounded on a bounded set: no KL function can dominate it", "iii",
                {"r": float(r), "s": best[1], "t": best[2], "value": best[0], "levels": levels})
        sup_here = max(best[0], _grid_sup(g, s_vals, t_eval, t_hi, probe.coarse))
        if cap > 0.0:
            _check_decay(g, s_vals, t_eval[t_eval >= t_hi], cap, r, t_hi)
            # a tighter cap: the level the probe already reached
            eps_c = max(sup_here, SIGMA_SLOPE * r)
            if eps_c < cap and _defined(tau_oracle, eps_c, r):
                t2 = _tau(tau_oracle, eps_c, r)
                _check_decay(g, s_vals, t_eval[t_eval >= t2], eps_c, r, t2)
                sup_here = max(sup_here, _grid_sup(g, s_vals, t_eval, t2, probe.coarse))
                cap = eps_c
        xi[i] = max(sup_here, cap)
    xi = np.maximum.accumulate(xi)

    sigma = _uniform_bound(sigma1, delta, r_grid, xi)

    rows, level_times, extended = [], [], {}
    for i, r in enumerate(r_grid):
        sig_r = float(sigma(r))
        ts, vals = [0.0], [2.0 * sig_r]
        tau_prev = 0.0
        for n in range(1, max_levels + 1):
            eps_n = sig_r * 2.0 ** (-n)
            if not _defined(tau_oracle, eps_n, r):
                t_end = max(t_max, tau_prev) + 1.0
                ts.append(t_end)
                vals.append(sig_r * 2.0 ** (-(n - 1)))
                extended[float(r)] = t_end
                break
            # spacing 2^-n, kept representable once it drops below the float resolution
            gap = max(2.0 ** (-n), 4.0 * math.ulp(max(tau_prev, 1.0)))
            tau_n = max(_tau(tau_oracle, eps_n, r), tau_prev + gap)
            # (i) on the probe grid
            _check_decay(g, s_all[s_all <= r], t_eval[t_eval >= tau_n], eps_n, r, tau_n)
            ts.append(tau_n)
            vals.append(sig_r * 2.0 ** (-(n - 1)))
            tau_prev = tau_n
            if tau_n > t_max:
                break
        rows.append(LTable(tuple(ts), tuple(vals)))
        level_times.append(ts)

    beta = KLTable(tuple(r_grid), tuple(rows), sigma,
                   {"sigma_knots": list(zip(sigma.xs, sigma.ys)) if hasattr(sigma, "xs") else None,
                    "level_times": level_times, "extended_after": extended, "xi": xi.tolist()})
    if check_post:
        S, T = np.meshgrid(s_eval, t_eval, indexing="ij")
        G = np.asarray(g(S, T), dtype=float)
        Bv = np.asarray(beta(S, T), dtype=float)
        bad = G > Bv
        if bad.any():
            a, b = np.unravel_index(int(np.argmax(G - Bv)), G.shape)
            raise AssertionError(f"majorant postcondition failed at s={S[a, b]}, t={T[a, b]}: "
                                 f"g={G[a, b]} > beta={Bv[a, b]}")
    return beta


def _grid_sup(g, s_vals, t_eval, t_hi, n):
    ts = np.unique(np.concatenate([t_eval[t_eval <= t_hi], np.linspace(0.0, t_hi, n)]))
    S, T = np.meshgrid(s_vals, ts, indexing="ij")
    return float(np.max(np.asarray(g(S, T), dtype=float), initial=0.0))


def _defined(oracle: TauOracle, eps: float, r: float) -> bool:
    try:
        v = float(oracle(eps, r))
    except (ValueError, ArithmeticError):
        return False
    return math.isfinite(v) and v >= 0


def _check_decay(g, s_vals, t_vals, eps, r, tau):
    if s_vals.size == 0 or t_vals.size == 0:
        return
    S, T = np.meshgrid(s_vals, t_vals, indexing="ij")
    V = np.asarray(g(S, T), dtype=float)
    if np.any(V > eps):
        a, b = np.unravel_index(int(np.argmax(V)), V.shape)
        raise HypothesisError("decay-time oracle is wrong", "i",
                              {"eps": eps, "r": float(r), "tau": tau, "s": float(S[a, b]),
                               "t": float(T[a, b]), "value": float(V[a, b])})


SIGMA_SLOPE = 1e-9


def _uniform_bound(sigma1, delta, r_grid, xi) -> PiecewiseLinearK:
    """K-infinity ``sigma`` with ``sup_{s <= r, t >= 0} g(s, t) <= sigma(r)``.

    Below ``delta`` the small-radius bound ``sigma1`` is used. Above it the
    table takes, on ``(r_i, r_{i+1}]``, at least the sup at ``r_{i+1}``; a
    tiny linear term keeps it strictly increasing.
    """
    xs = [0.0]
    ys = [0.0]
    above = [i for i, r in enumerate(r_grid) if r > delta]
    if above:
        first = above[0]
        xs.append(float(delta))
        ys.append(float(xi[first]))
        for k, i in enumerate(above):
            nxt = above[k + 1] if k + 1 < len(above) else i
            xs.append(float(r_grid[i]))
            ys.append(float(xi[nxt]))
    # take the pointwise max with sigma1 at the knots; between knots sigma1
    # is handled by the extra knots below
    dense = np.unique(np.concatenate([np.asarray(xs), np.linspace(0.0, max(xs[-1], delta), 257)]))
    table = np.interp(dense, xs, ys)
    vals = np.maximum(table, np.asarray(sigma1(dense), dtype=float))
    vals = np.maximum.accumulate(vals) + SIGMA_SLOPE * dense
    vals[0] = 0.0
    last = max(float(dense[-1]), 1e-300)
    slope = max(float(vals[-1]) / last, SIGMA_SLOPE)
    return PiecewiseLinearK(tuple(dense), tuple(vals), slope)


# --- ISS certificate from data ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EmpiricalG:
    """``g(r, tau) = sup{|phi| - gamma(|u|) : |x0| <= r, |u| <= r, t >= tau}`` over a cloud.

    Values are clipped below at 0; where no record qualifies the value is 0.
    """

    radii: np.ndarray
    times: np.ndarray
    table: np.ndarray

    @classmethod
    def from_cloud(cls, cloud: SampleCloud, gamma: ComparisonFunction) -> "EmpiricalG":
        if len(cloud) == 0:
            raise ValueError("empty cloud")
        m = np.maximum(cloud.x0_norm, cloud.u_norm)
        radii = np.unique(m)
        times = np.unique(cloud.t)
        vals = cloud.phi_norm - np.asarray(gamma(cloud.u_norm), dtype=float)
        table = np.zeros((len(radii), len(times)))
        np.maximum.at(table, (np.searchsorted(radii, m), np.searchsorted(times, cloud.t)), vals)
        table = np.maximum.accumulate(table[:, ::-1], axis=1)[:, ::-1]
        table = np.maximum.accumulate(table, axis=0)
        return cls(radii, times, table)

    def __call__(self, s, t):
        s_arr, t_arr = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        i = np.searchsorted(self.radii, s_arr, side="right") - 1
        j = np.searchsorted(self.times, t_arr, side="left")
        ok = (i >= 0) & (j < len(self.times))
        out = np.zeros(s_arr.shape)
        out[ok] = self.table[i[ok], j[ok]]
        return float(out) if out.ndim == 0 else out

    def tau(self, eps: float, r: float) -> float:
        """Smallest recorded time from which ``g(r, .) <= eps``; undefined past the data."""
        i = int(np.searchsorted(self.radii, r, side="right")) - 1
        if i < 0:
            return 0.0
        row = self.table[i]
        ok = row <= eps
        if not ok[-1]:
            raise ValueError("data never falls below eps")
        # row is nonincreasing: first index of the final all-true run
        bad = np.flatnonzero(~ok)
        j = 0 if bad.size == 0 else bad[-1] + 1
        return float(self.times[j])


@dataclass(frozen=True, eq=False)
class GainEstimate:
    """ISS certificate ``|phi| <= beta(|x0|, t) + beta(|u|, 0) + gamma(|u|)``."""

    beta: ComparisonFunction
    gamma: ComparisonFunction
    provenance: str
    details: Dict = field(default_factory=dict)

    def bound(self, x0_norm, u_norm, t):
        u0 = np.zeros_like(np.asarray(u_norm, dtype=float))
        return np.asarray(self.beta(x0_norm, t), dtype=float) + \
            np.asarray(self.beta(u_norm, u0), dtype=float) + np.asarray(self.gamma(u_norm), dtype=float)

    def validate(self, cloud: SampleCloud, tol: float = DEFAULT_TOL) -> Report:
        bound = self.bound(cloud.x0_norm, cloud.u_norm, cloud.t)
        bad = cloud.phi_norm > bound + tol
        viol = _blowup_violations(cloud) + _violations(cloud, bad, bound)
        return Report("certificate", not viol, tuple(viol),
                      {"records": len(cloud), "provenance": self.provenance,
                       "max_excess": float(np.max(cloud.phi_norm - bound, initial=-np.inf))})


def assemble_iss_certificate(cloud: SampleCloud, gamma: ComparisonFunction,
                             sigma1: ComparisonFunction | None = None, delta: float | None = None,
                             r_grid: Sequence[float] | None = None,
                             holdout: SampleCloud | None = None,
                             tol: float = DEFAULT_TOL) -> Tuple[GainEstimate, Optional[Report]]:
    """ISS gains from a cloud: empirical ``g`` fed to :func:`kl_majorant`.

    ``sigma1`` defaults to the linear gain with the largest observed ratio
    ``g(r, 0) / r`` and ``delta`` to the largest radius in the cloud. The
    returned report validates the certificate on ``holdout`` when given.
    """
    g = EmpiricalG.from_cloud(cloud, gamma)
    pos = g.radii[g.radii > 0]
    if pos.size == 0:
        raise HypothesisError("cloud has no positive radius", "ii")
    if delta is None:
        delta = float(pos.max())
    if sigma1 is None:
        zero_rows = g.radii <= 0
        if np.any(g.table[zero_rows, 0] > 0):
            raise HypothesisError("positive g at radius 0 rules out a small-radius K bound", "ii",
                                  {"value": float(g.table[zero_rows, 0].max())})
        slope = float(np.max(g.table[g.radii > 0, 0] / g.radii[g.radii > 0]))
        sigma1 = cf.linear(max(slope, SIGMA_SLOPE))
    if r_grid is None:
        r_grid = pos
    t_eval = g.times
    beta = kl_majorant(g, sigma1, delta, g.tau, r_grid, g.radii, t_eval)
    est = GainEstimate(beta, gamma, "superposition",
                       {"sigma1": sigma1.to_dict(), "delta": delta, "records": len(cloud)})
    report = est.validate(holdout, tol) if holdout is not None else None
    return est, report
