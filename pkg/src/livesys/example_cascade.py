"""Case study: a growing network of identical linear agents driving a scalar cascade.

Agents ``x_i' = A x_i`` join one per impulse, their initial state read from
their own input channel; nobody leaves. The scalar ``z' = -z^3 + |x|`` reads
the pseudonorm of the network. ``z`` lives in every configuration as the
permanent agent 0 but is excluded from the network pseudonorm, so the
network certificate and the cascade are checked separately.

With ``P`` solving ``A^T P + P A = -I``, ``V(x) = sum_j x_j^T P x_j`` gives
``c = 1 / lambda_max(P)`` and, from ``V(post) = V(pre) + u^T P u``, the jump
factor ``1 + eps`` once ``lambda_max(P) |u|^2 <= eps V``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import comparison as cf
from .core_state import Configuration, LiveState, pseudonorm, register_norm_kind
from .errors import DefinitionError
from .flow_engine import ImpulseSchedule, LiveSystemDefinition, ScheduleSpec, Trajectory, evolve
from .lyapunov import (GadtBudget, IssLyapunovFunction, check_gadt, exp_budget,
                       exponential_iss_gains, quadratic_form, sample_states_and_inputs,
                       verify_lyapunov_conditions)
from .numerics import solve_lyapunov, sym_eig_extremes
from .omas import ArrivalStream, FunctionAgent, LinearAgent, OmasDefinition, compile, evolve_pool
from .rng import SplitMix64
from .signals import InputSignal, InputValue, arrival_signal, signal_norm
from .stability import (GainEstimate, Report, SampleCloud, assemble_iss_certificate, ball_samples,
                        check_ciucs, check_iss)

Z_AGENT = 0
NETWORK_NORM = "cascade_network"


def _network_norm(config: Configuration, data: np.ndarray) -> float:
    if Z_AGENT in config.agents:
        sl = config.block_slice(Z_AGENT)
        return math.sqrt(float(np.dot(data, data)) - float(np.dot(data[sl], data[sl])))
    return math.sqrt(float(np.dot(data, data)))


def _network_norm_rows(config: Configuration, states: np.ndarray) -> np.ndarray:
    keep = np.ones(states.shape[1], dtype=bool)
    if Z_AGENT in config.agents:
        keep[config.block_slice(Z_AGENT)] = False
    sub = states[:, keep]
    return np.sqrt(np.einsum("ij,ij->i", sub, sub))


_network_norm.rows = _network_norm_rows
register_norm_kind(NETWORK_NORM, _network_norm)


def z_value(x: LiveState) -> float:
    return float(x.data[x.config.block_slice(Z_AGENT)][0])


def joint_norm(x: LiveState) -> float:
    """``sqrt(|x_network|^2 + z^2)``, the norm of the whole cascade."""
    return math.sqrt(float(np.dot(x.data, x.data)))


@dataclass(frozen=True, eq=False)
class CascadeScenario:
    """Parameters of one case-study run.

    ``magnitudes[k - 1]`` scales the vector carried by the ``k``-th arrival
    (unit when absent); ``halving=True`` uses ``2^-k`` instead. ``engine``
    selects per-agent integration or the lumped pool engine, which is the
    only practical choice when the schedule has millions of arrivals (the
    pool engine does not carry ``z``).
    """

    name: str
    A: np.ndarray
    schedule: ScheduleSpec
    horizon: float
    epsilon: float = 1.0
    magnitudes: Tuple[float, ...] = ()
    halving: bool = False
    direction: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None
    z0: float = 0.0
    step: float = 1e-3
    budget: Tuple[float, float] = (math.e, 1.0)
    engine: str = "agents"
    escape: float = 1e9
    divergence_threshold: float = 1e3
    gadt_horizon: Optional[float] = None
    battery: int = 20
    battery_step: float = 1e-2
    seed: int = 2024

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        object.__setattr__(self, "A", A)
        s = A.shape[0]
        d = np.zeros(s) if self.direction is None else np.asarray(self.direction, dtype=float).reshape(s)
        if self.direction is None:
            d[0] = 1.0
        object.__setattr__(self, "direction", d)
        x0 = d.copy() if self.x0 is None else np.asarray(self.x0, dtype=float).reshape(s)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "magnitudes", tuple(float(m) for m in self.magnitudes))
        if not self.epsilon > 0:
            raise DefinitionError("epsilon must be positive")
        if self.engine not in ("agents", "pool"):
            raise DefinitionError(f"unknown engine {self.engine!r}")
        if not self.horizon > 0:
            raise DefinitionError("horizon must be positive")

    def magnitude(self, k: int) -> float:
        if self.halving:
            return 2.0 ** (-k)
        if self.magnitudes:
            return self.magnitudes[k - 1] if k <= len(self.magnitudes) else 0.0
        return 1.0

    def impulses(self, horizon: Optional[float] = None) -> ImpulseSchedule:
        return self.schedule.build(self.horizon if horizon is None else horizon)


@dataclass(frozen=True, eq=False)
class CascadeModel:
    """Compiled case study: the live system, its input and the Lyapunov data."""

    scenario: CascadeScenario
    omas: OmasDefinition
    system: LiveSystemDefinition
    schedule: ImpulseSchedule
    x0: LiveState
    u: InputSignal
    P: np.ndarray
    lam_min: float
    lam_max: float
    c: float
    d: float
    lyapunov: IssLyapunovFunction
    budget: GadtBudget


def lyapunov_constants(A, epsilon: float) -> Dict[str, object]:
    """``P``, its extreme eigenvalues, ``c = 1/lambda_max`` and ``d = -ln(1 + eps)``."""
    P = solve_lyapunov(A)
    lam_min, lam_max = sym_eig_extremes(P)
    return {"P": P, "lam_min": lam_min, "lam_max": lam_max, "c": 1.0 / lam_max,
            "d": -math.log1p(epsilon)}


def cascade_lyapunov(P, lam_min: float, lam_max: float, c: float, d: float,
                     epsilon: float, exclude: Sequence[int] = (Z_AGENT,)) -> IssLyapunovFunction:
    """Quadratic function with ``psi1 = lam_min s^2``, ``psi2 = lam_max s^2``, ``chi = lam_max s^2 / eps``.

    The jump bound holds in max form: joining agents add ``u^T P u <= lam_max |u|^2``
    and leaving agents only lower ``V``.
    """
    return IssLyapunovFunction.exponential(
        quadratic_form(P, exclude=exclude), cf.Power(lam_min, 2.0), cf.Power(lam_max, 2.0),
        cf.Power(lam_max / epsilon, 2.0), c, d, jump_max_form=True)


def arrival_input(scn: CascadeScenario, sched: ImpulseSchedule,
                  vectors: Optional[Sequence[np.ndarray]] = None) -> InputSignal:
    """Channel ``k + 1`` carries the state of the agent joining at impulse ``k``."""
    arr = {}
    for i, (tk, k) in enumerate(zip(sched.times, sched.indices)):
        v = scn.magnitude(k) * scn.direction if vectors is None else vectors[i]
        arr[k + 1] = (tk, v)
    return arrival_signal(arr)


def build(scn: CascadeScenario, u: Optional[InputSignal] = None,
          schedule: Optional[ImpulseSchedule] = None) -> CascadeModel:
    """Compile the network, cascade and Lyapunov function of ``scn``.

    Raises
    ------
    DefinitionError
        When ``A`` is not Hurwitz.
    """
    consts = lyapunov_constants(scn.A, scn.epsilon)
    sched = scn.impulses() if schedule is None else schedule
    s = scn.A.shape[0]

    def z_field(t, x, u_i):
        z = x.data[x.config.block_slice(Z_AGENT)]
        return -z ** 3 + _network_norm(x.config, x.data)

    omas = OmasDefinition({Z_AGENT: FunctionAgent(1, z_field)}, {Z_AGENT, 1},
                          arrivals={k: {k + 1} for k in sched.indices},
                          default_agent=LinearAgent(scn.A), norm_kind=NETWORK_NORM,
                          escape_threshold=scn.escape)
    system = compile(omas, sched)
    cfg0 = omas.configuration({Z_AGENT, 1})
    x0 = LiveState.from_blocks(cfg0, {Z_AGENT: [scn.z0], 1: scn.x0})
    u = arrival_input(scn, sched) if u is None else u
    lf = cascade_lyapunov(consts["P"], consts["lam_min"], consts["lam_max"], consts["c"],
                          consts["d"], scn.epsilon)
    return CascadeModel(scn, omas, system, sched, x0, u, consts["P"], consts["lam_min"],
                        consts["lam_max"], consts["c"], consts["d"], lf, exp_budget(*scn.budget))


# --- diagnostics ------------------------------------------------------------------------


def jump_identity_error(model: CascadeModel, traj: Trajectory) -> float:
    """Largest ``|V(post) - V(pre) - u^T P u|`` over the jumps of ``traj``."""
    worst = 0.0
    for j in traj.jumps:
        v = np.asarray(model.u.value(j.k + 1, j.t), dtype=float)
        gain = float(v @ model.P @ v)
        err = abs(model.lyapunov(j.post) - model.lyapunov(j.pre) - gain)
        worst = max(worst, err)
    return worst


def flow_decay_ratio(model: CascadeModel, traj: Trajectory) -> float:
    """Largest ``V(phi(t)) / (exp(-c (t - t_start)) V(start))`` over flow samples."""
    worst = 0.0
    for seg in traj.segments:
        v0 = model.lyapunov(seg.state(0))
        if v0 == 0.0:
            continue
        for i in range(1, len(seg.times)):
            v = model.lyapunov(seg.state(i))
            worst = max(worst, v / (math.exp(-model.c * (seg.times[i] - seg.start)) * v0))
    return worst


def lyapunov_samples(model: CascadeModel) -> Tuple[List[LiveState], List[InputValue]]:
    """Sample states and arrival inputs for the Lyapunov condition checks."""
    return sample_states_and_inputs(model.system, model.schedule, model.x0,
                                    SplitMix64(model.scenario.seed).spawn(1))


def battery(model: CascadeModel, n: int, seed: int, scale_x0: float = 2.0, u_max: float = 1.0
            ) -> List[Tuple[str, LiveState, InputSignal]]:
    """``n`` runs with random arrival vectors of norm ``<= u_max`` and random initial states."""
    rng = SplitMix64(seed)
    s = model.scenario.A.shape[0]
    out = []
    for i in range(n):
        sub = rng.spawn(i)
        vecs = []
        for _ in model.schedule.times:
            d = sub.normal(s)
            d = d / max(float(np.linalg.norm(d)), 1e-300)
            vecs.append(sub.uniform(0.0, u_max) * d)
        u = arrival_input(model.scenario, model.schedule, vecs)
        x = sub.normal(s)
        x = sub.uniform(0.0, scale_x0) * x / max(float(np.linalg.norm(x)), 1e-300)
        x0 = LiveState.from_blocks(model.x0.config, {Z_AGENT: [sub.uniform(-1.0, 1.0)], 1: x})
        out.append((f"pattern-{i:02d}", x0, u))
    return out


def battery_cloud(model: CascadeModel, runs, step: Optional[float] = None) -> SampleCloud:
    clouds = []
    for name, x0, u in runs:
        traj = evolve(model.system, model.schedule, x0, u, model.scenario.horizon,
                      model.scenario.step if step is None else step)
        clouds.append(SampleCloud.from_trajectory(traj, pseudonorm(x0), signal_norm(u), name))
    return SampleCloud.merge(clouds)


# --- reports ----------------------------------------------------------------------------


@dataclass
class CaseStudyReport:
    name: str
    P: List[List[float]]
    lam_min: float
    lam_max: float
    c: float
    d: float
    gadt: Dict
    trajectory: Dict
    checks: Dict[str, Dict] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.get("passed", True) for v in self.checks.values())

    def to_dict(self) -> dict:
        return {"name": self.name, "P": self.P, "lambda_min": self.lam_min,
                "lambda_max": self.lam_max, "c": self.c, "d": self.d, "gadt": self.gadt,
                "trajectory": self.trajectory, "checks": self.checks, "passed": self.passed}


def trajectory_summary(traj: Trajectory) -> Dict:
    ts, ns = traj.norm_series()
    zs = [z_value(seg.state(i)) for seg in traj.segments for i in (0, len(seg.times) - 1)]
    z_sup = max(float(np.max(np.abs(seg.states[:, seg.config.block_slice(Z_AGENT)])))
                for seg in traj.segments)
    joint = max(float(np.max(np.sqrt(np.einsum("ij,ij->i", seg.states, seg.states))))
                for seg in traj.segments)
    return {"status": traj.status, "t_final": traj.final_time, "t_esc": traj.t_esc,
            "impulses": len(traj.jumps), "network_sup": float(ns.max()),
            "network_final": float(ns[-1]), "z_sup": z_sup, "z_final": zs[-1],
            "joint_sup": joint}


def run_divergence(scn: CascadeScenario, step: float = 1e-2, check_times: Sequence[float] = (20.0,)
                   ) -> Dict:
    """Pool-engine run: when the network pseudonorm first exceeds the threshold and how it grows after."""
    if scn.halving or scn.magnitudes:
        raise DefinitionError("the pool run assumes unit arrivals")
    if scn.schedule.kind == "log-shrinking":
        stream = ArrivalStream.log_schedule(scn.direction)
    else:
        stream = ArrivalStream.from_times(scn.impulses().times, scn.direction)
    grid = np.arange(1.0, math.floor(scn.horizon) + 1.0)
    samples = sorted({*grid.tolist(), *[t for t in check_times if t <= scn.horizon]})
    pool = evolve_pool(scn.A, np.outer(scn.x0, scn.x0), stream, scn.horizon, step, samples)
    norms = pool.pseudonorm()
    over = np.flatnonzero(norms > scn.divergence_threshold)
    t_cross = float(pool.times[over[0]]) if over.size else None
    at = {float(t): float(norms[np.searchsorted(pool.times, t)]) for t in samples}
    unit = [at[float(t)] for t in grid]
    after = [v for t, v in zip(grid, unit) if t_cross is not None and t >= t_cross]
    monotone = all(b >= a for a, b in zip(after, after[1:]))
    out = {"engine": "pool", "threshold": scn.divergence_threshold, "t_cross": t_cross,
           "arrivals": int(pool.arrivals[-1]), "network_final": float(norms[-1]),
           "monotone_after_cross": bool(monotone and t_cross is not None),
           "norm_at": {repr(t): at[float(t)] for t in check_times if t <= scn.horizon}}
    return out


def run_case_study(scn: CascadeScenario, battery_size: Optional[int] = None,
                   lyapunov_tol: float = 1e-3, iss_tol: float = 1e-4) -> CaseStudyReport:
    """Constants, dwell-time verdict, nominal run and the stability checks of ``scn``."""
    consts = lyapunov_constants(scn.A, scn.epsilon)
    c, d = consts["c"], consts["d"]
    budget = exp_budget(*scn.budget)
    g_h = scn.horizon if scn.gadt_horizon is None else min(scn.gadt_horizon, scn.horizon)
    gadt = check_gadt(scn.schedule.build(g_h), c, d, budget, g_h).to_dict()
    gadt["horizon"] = g_h
    if scn.engine == "pool":
        div = run_divergence(scn)
        checks = {"divergence": {"passed": div["t_cross"] is not None and div["monotone_after_cross"],
                                 **div}}
        return CaseStudyReport(scn.name, consts["P"].tolist(), consts["lam_min"], consts["lam_max"],
                               c, d, gadt, div, checks)
    model = build(scn)
    traj = evolve(model.system, model.schedule, model.x0, model.u, scn.horizon, scn.step)
    summary = trajectory_summary(traj)
    checks: Dict[str, Dict] = {}
    jerr = jump_identity_error(model, traj)
    checks["jump_identity"] = {"passed": jerr <= 1e-12, "max_error": jerr}
    ratio = flow_decay_ratio(model, traj)
    checks["flow_decay"] = {"passed": ratio <= 1.0 + 1e-6, "max_ratio": ratio}
    states, inputs = lyapunov_samples(model)
    lrep = verify_lyapunov_conditions(model.system, model.lyapunov, states, inputs, lyapunov_tol)
    checks["lyapunov"] = {"passed": lrep.passed, "violations": list(lrep.violations[:5]),
                          **lrep.summary}
    net_sup = summary["network_sup"]
    z_cap = max(abs(scn.z0), net_sup ** (1.0 / 3.0)) + 1e-6
    checks["cascade_bounded"] = {"passed": summary["z_sup"] <= z_cap and traj.status == "completed",
                                 "z_sup": summary["z_sup"], "bound": z_cap}
    if gadt["passed"]:
        beta, gamma = exponential_iss_gains(model.lyapunov, model.budget)
        n = scn.battery if battery_size is None else battery_size
        runs = battery(model, n, scn.seed)
        cloud = battery_cloud(model, runs, scn.battery_step)
        rep = check_iss(cloud, beta, gamma, iss_tol)
        cert = GainEstimate(beta, gamma, "lyapunov").validate(cloud, iss_tol)
        checks["iss"] = {"passed": rep.passed, "violations": list(rep.violations[:5]),
                         "records": len(cloud), "max_excess": rep.summary["max_excess"],
                         "beta": beta.to_dict(), "gamma": gamma.to_dict()}
        checks["certificate"] = {"passed": cert.passed, "max_excess": cert.summary["max_excess"],
                                 "violations": list(cert.violations[:5])}
        train = cloud.select(np.array([int(str(s)[-2:]) % 2 == 0 for s in cloud.scenario]))
        hold = cloud.select(np.array([int(str(s)[-2:]) % 2 == 1 for s in cloud.scenario]))
        if len(train) and len(hold):
            est, hrep = assemble_iss_certificate(train, gamma, holdout=hold, tol=iss_tol)
            checks["empirical_certificate"] = {"passed": hrep.passed,
                                               "max_excess": hrep.summary["max_excess"],
                                               "violations": list(hrep.violations[:5])}
    return CaseStudyReport(scn.name, consts["P"].tolist(), consts["lam_min"], consts["lam_max"],
                           c, d, gadt, summary, checks)


def run_ciucs(scn: CascadeScenario, radii: Sequence[float] = (1.0, 10.0), n: int = 8,
              eps: float = 1e-3, step: float = 1e-2) -> Dict[float, Report]:
    """Uniform convergence of the network from balls of the given radii."""
    model = build(scn)
    times = np.arange(0.0, math.floor(scn.horizon) + 1.0)
    rng = SplitMix64(scn.seed).spawn(7)
    out = {}
    for r in radii:
        # the ball is in the network norm; the cascade starts from z0 in every sample
        states = [LiveState.from_blocks(x.config, {Z_AGENT: [scn.z0], 1: x.block(1)})
                  for x in ball_samples(model.x0.config, r, n, rng)]
        out[r] = check_ciucs(model.system, model.schedule, model.u, states, times, eps, step)
    return out


# --- built-in scenarios -----------------------------------------------------------------


def builtin(name: str) -> CascadeScenario:
    if name == "cascade-admissible":
        return CascadeScenario(name, np.array([[-1.0]]), ScheduleSpec("periodic", 1.0), 50.0)
    if name == "cascade-divergent":
        return CascadeScenario(name, np.array([[-1.0]]), ScheduleSpec("log-shrinking"), 20.0,
                               engine="pool", gadt_horizon=5.0)
    if name == "cascade-ciucs":
        return CascadeScenario(name, np.array([[-1.0]]), ScheduleSpec("periodic", 1.0), 20.0,
                               halving=True, step=1e-2)
    raise KeyError(f"unknown built-in scenario {name!r}")


BUILTINS = ("cascade-admissible", "cascade-divergent", "cascade-ciucs")
