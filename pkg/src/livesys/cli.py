"""Command line entry point: ``livesys simulate`` and ``livesys check``.

Exit codes: 0 success or pass, 1 error (bad scenario, undefined check
parameters), 2 blow-up during ``simulate``, 3 property falsified by ``check``.
``LIVESYS_THREADS`` bounds the worker threads used for trajectory batteries.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from . import example_cascade as cascade
from .core_state import LiveState, pseudonorm
from .errors import HypothesisError, LiveSysError, ScenarioError
from .flow_engine import (AxiomSample, ImpulseSchedule, LiveSystemDefinition, Trajectory,
                          check_causality, check_cocycle, check_identity, evolve)
from .lyapunov import (GadtBudget, IssLyapunovFunction, check_gadt, exp_budget,
                       exponential_iss_gains, sample_states_and_inputs, uniform_iss_over_class,
                       verify_lyapunov_conditions)
from .numerics import solve_lyapunov, sym_eig_extremes
from .omas import ArrivalStream, evolve_pool
from .rng import SplitMix64
from .scenario import Scenario, build_linear, build_signal, cascade_scenario, comparison, load
from .signals import InputSignal, signal_norm
from .stability import (GainEstimate, SampleCloud, assemble_iss_certificate, ball_samples,
                        check_brs, check_ciucs, check_hierarchy, check_iss, check_uag, check_uls,
                        check_ulim, common_lattice, iss_implied_parameters)

EXIT_OK, EXIT_ERROR, EXIT_BLOWUP, EXIT_FALSIFIED = 0, 1, 2, 3
POOL_CHECK_HORIZON = 5.0


def threads() -> int:
    try:
        return max(1, int(os.environ.get("LIVESYS_THREADS", "1")))
    except ValueError:
        return 1


def _jsonable(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    return repr(o)


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_jsonable)


# --- run context ------------------------------------------------------------------------


@dataclass(eq=False)
class Context:
    """Everything a check needs, for either scenario kind."""

    scenario: Scenario
    system: LiveSystemDefinition
    schedule: ImpulseSchedule
    x0: LiveState
    u: InputSignal
    horizon: float
    step: float
    lyapunov: Optional[IssLyapunovFunction]
    budget: Optional[GadtBudget]
    cascade_model: Optional[cascade.CascadeModel] = None
    linear_model: Any = None


def _linear_lyapunov(scn: Scenario, model) -> Tuple[Optional[IssLyapunovFunction], Optional[GadtBudget]]:
    ly = scn.doc.get("lyapunov")
    if ly is None:
        return None, None
    eps = float(ly.get("epsilon", 1.0))
    if "P" in ly:
        P = np.asarray(ly["P"], dtype=float)
    elif model.agent_matrix is not None:
        P = solve_lyapunov(model.agent_matrix)
    else:
        raise ScenarioError("lyapunov: agents have different matrices; give P explicitly")
    lam_min, lam_max = sym_eig_extremes(P)
    c = float(ly.get("c", 1.0 / lam_max))
    d = float(ly.get("d", -math.log1p(eps)))
    h = ly.get("h", {"a": math.e, "rate": 1.0})
    lf = cascade.cascade_lyapunov(P, lam_min, lam_max, c, d, eps, exclude=())
    return lf, exp_budget(float(h["a"]), float(h["rate"]))


def make_context(scn: Scenario, escape: Optional[float] = None,
                 horizon: Optional[float] = None) -> Context:
    H = scn.horizon if horizon is None else horizon
    if scn.kind == "cascade":
        cs = cascade_scenario(scn, escape)
        if cs.engine == "pool":
            # checks run the per-agent engine on a prefix short enough to enumerate
            H = min(H, cs.gadt_horizon or POOL_CHECK_HORIZON)
        model = cascade.build(cs, schedule=cs.impulses(H))
        return Context(scn, model.system, model.schedule, model.x0, model.u, H, scn.step,
                       model.lyapunov, model.budget, cascade_model=model)
    lm = build_linear(scn, escape)
    lf, budget = _linear_lyapunov(scn, lm)
    return Context(scn, lm.system, lm.schedule.until(H), lm.x0, lm.u, H, scn.step, lf, budget,
                   linear_model=lm)


def _unit(rng: SplitMix64, dim: int) -> np.ndarray:
    v = rng.normal(dim)
    return v / max(float(np.linalg.norm(v)), 1e-300)


def battery(ctx: Context, runs: int, x0_max: float, u_max: float, seed: int
            ) -> List[Tuple[str, LiveState, InputSignal]]:
    """Random initial states and arrival values, reproducible from ``seed``."""
    if ctx.cascade_model is not None:
        return cascade.battery(ctx.cascade_model, runs, seed, x0_max, u_max)
    lm = ctx.linear_model
    rng = SplitMix64(seed)
    cfg = ctx.x0.config
    out = []
    arrivals = sorted(lm.arrival_agents)
    for i in range(runs):
        sub = rng.spawn(i)
        x0 = LiveState(cfg, sub.uniform(0.0, x0_max) * _unit(sub, cfg.dim))
        vals = {a: sub.uniform(0.0, u_max) * _unit(sub, lm.omas.dim_of(a)) for a in arrivals}
        out.append((f"pattern-{i:02d}", x0, build_signal(ctx.scenario, vals)))
    return out


def run_battery(ctx: Context, runs, step: Optional[float] = None,
                horizon: Optional[float] = None) -> SampleCloud:
    H = ctx.horizon if horizon is None else horizon
    h = ctx.step if step is None else step

    def one(run):
        name, x0, u = run
        traj = evolve(ctx.system, ctx.schedule, x0, u, H, h)
        return SampleCloud.from_trajectory(traj, pseudonorm(x0), signal_norm(u), name)

    with ThreadPoolExecutor(max_workers=threads()) as pool:
        clouds = list(pool.map(one, runs))
    return SampleCloud.merge(clouds)


def _battery_cloud(ctx: Context, p: Dict[str, Any]) -> SampleCloud:
    runs = battery(ctx, int(p.get("runs", 20)), float(p.get("x0_max", 2.0)),
                   float(p.get("u_max", 1.0)), int(p.get("seed", ctx.scenario.seed)))
    return run_battery(ctx, runs, p.get("step", 1e-2), p.get("horizon"))


def _gains(ctx: Context, p: Dict[str, Any]):
    mode = p.get("gains", "explicit" if "beta" in p or "gamma" in p else "lyapunov")
    if mode == "explicit":
        return comparison(p.get("beta"), "beta"), comparison(p.get("gamma"), "gamma")
    if ctx.lyapunov is None:
        raise ScenarioError("gains 'lyapunov' need a lyapunov section")
    return exponential_iss_gains(ctx.lyapunov, ctx.budget)


def _require(p: Dict[str, Any], key: str):
    if key not in p:
        raise ScenarioError(f"check {p['check']!r} needs parameter {key!r}")
    return p[key]


def _report(rep) -> Dict[str, Any]:
    return {"passed": bool(rep.passed), "witnesses": list(rep.violations), "summary": rep.summary}


# --- checks -----------------------------------------------------------------------------


def _gadt_horizon(ctx: Context, p: Dict[str, Any]) -> float:
    ly = ctx.scenario.doc.get("lyapunov", {})
    return float(p.get("horizon", ly.get("gadt_horizon", ctx.horizon)))


def check_gadt_cmd(ctx: Context, p: Dict[str, Any]) -> Dict[str, Any]:
    if ctx.lyapunov is None:
        raise ScenarioError("gadt needs a lyapunov section for c, d and h")
    c, d = ctx.lyapunov.rates
    H = _gadt_horizon(ctx, p)
    rep = check_gadt(ctx.scenario.schedule(H), c, d, ctx.budget, H, int(p.get("grid", 201)))
    return {"passed": rep.admissible, "witnesses": [rep.witness] if rep.witness else [],
            "summary": {"c": c, "d": d, "horizon": H, "pairs_checked": rep.pairs_checked,
                        "worst_margin": rep.worst_margin}}


def _lyapunov_report(ctx: Context, p: Dict[str, Any]):
    if ctx.lyapunov is None:
        raise ScenarioError("lyapunov check needs a lyapunov section")
    rng = SplitMix64(int(p.get("seed", ctx.scenario.seed))).spawn(1)
    states, inputs = sample_states_and_inputs(ctx.system, ctx.schedule, ctx.x0, rng)
    return verify_lyapunov_conditions(ctx.system, ctx.lyapunov, states, inputs,
                                      float(p.get("flow_tol", 1e-3)))


def check_lyapunov_cmd(ctx: Context, p: Dict[str, Any]) -> Dict[str, Any]:
    out = _report(_lyapunov_report(ctx, p))
    c, d = ctx.lyapunov.rates
    out["summary"].update({"c": c, "d": d})
    return out


def check_axioms_cmd(ctx: Context, p: Dict[str, Any]) -> Dict[str, Any]:
    H = float(p.get("horizon", min(ctx.horizon, 5.0)))
    rng = SplitMix64(int(p.get("seed", ctx.scenario.seed))).spawn(2)
    cfg = ctx.x0.config
    samples = []
    for _ in range(int(p.get("samples", 10))):
        x0 = LiveState(cfg, rng.uniform(0.0, 1.0) * _unit(rng, cfg.dim))
        samples.append(AxiomSample(x0, ctx.u, rng.uniform(0.1, 0.6) * H, rng.uniform(0.1, 0.4) * H))
    step = float(p.get("step", ctx.step))
    reps = [check_identity(ctx.system, ctx.schedule, samples, step),
            check_causality(ctx.system, ctx.schedule, samples, step),
            check_cocycle(ctx.system, ctx.schedule, samples, float(p.get("tol", 1e-9)), step)]
    return {"passed": all(r.passed for r in reps),
            "witnesses": [dict(e, axiom=r.name) for r in reps for e in r.entries if not e["ok"]],
            "summary": {r.name: {"passed": r.passed, "max_discrepancy": r.max_discrepancy}
                        for r in reps}}


def check_iss_cmd(ctx: Context, p: Dict[str, Any]) -> Dict[str, Any]:
    mode = p.get("gains", "explicit" if "beta" in p else "lyapunov")
    tol = float(p.get("tol", 1e-4))
    if mode == "explicit":
        beta, gamma = _gains(ctx, p)
        return _report(check_iss(_battery_cloud(ctx, p), beta, gamma, tol))
    if ctx.lyapunov is None:
        raise ScenarioError("gains 'lyapunov' need a lyapunov section")
    lrep = _lyapunov_report(ctx, p)
    batteries = {ctx.scenario.name: (ctx.scenario.schedule(_gadt_horizon(ctx, p)),
                                     lambda: _battery_cloud(ctx, p))}
    try:
        rep = uniform_iss_over_class(batteries, ctx.lyapunov, ctx.budget, _gadt_horizon(ctx, p),
                                     lrep, tol)
    except HypothesisError as exc:
        return {"passed": False, "witnesses": [dict(exc.witness, hypothesis=exc.hypothesis)],
                "summary": {"reason": str(exc)}}
    return _report(rep)


def check_brs_cmd(ctx: Context, p: Dict[str, Any]) -> Dict[str, Any]:
    groups = [tuple(g) for g in _require(p, "groups")]
    bound = comparison(p["bound"], "bound") if "bound" in p else None
    return _report(check_brs(_battery_cloud(ctx, p), groups, bound))


def check_uls_cmd(ctx: Context, p: Dict[str, Any]) -> Dict[str, Any]:
    r = float(p.get("r", p.get("x0_max", 2.0)))
    tol = float(p.get("tol", 1e-4))
    if "sigma" in p:
        sigma, gamma = comparison(p["sigma"], "sigma"), comparison(p.get("gamma"), "gamma")
    else:
        beta, gamma = _gains(ctx, p)
        sigma = iss_implied_parameters(beta, gamma, [0.0]).sigma
    return _report(check_uls(_battery_cloud(ctx, p), sigma, gamma, r, tol))


def _limit_check(fn: Callable, ctx: Context, p: Dict[str, Any]) -> Dict[str, Any]:
    pairs = [tuple(q) for q in _require(p, "pairs")]
    beta, gamma = _gains(ctx, p)
    cloud = _battery_cloud(ctx, p)
    implied = iss_implied_parameters(beta, gamma, common_lattice(cloud))
    try:
        rep = fn(cloud, gamma, implied.tau, pairs, float(p.get("tol", 1e-4)))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    return _report(rep)


def check_uag_cmd(ctx: Context, p: Dict[str, Any]) -> Dict[str, Any]:
    return _limit_check(check_uag, ctx, p)


def check_ulim_cmd(ctx: Context, p: Dict[str, Any]) -> Dict[str, Any]:
    return _limit_check(check_ulim, ctx, p)


def check_hierarchy_cmd(ctx: Context, p: Dict[str, Any]) -> Dict[str, Any]:
    beta, gamma = _gains(ctx, p)
    pairs = [tuple(q) for q in _require(p, "pairs")]
    groups = [tuple(g) for g in p.get("groups", [[float(p.get("x0_max", 2.0)), ctx.horizon]])]
    reps = check_hierarchy(_battery_cloud(ctx, p), beta, gamma, pairs,
                           float(p.get("r", p.get("x0_max", 2.0))), groups,
                           float(p.get("tol", 1e-4)))
    iss_ok = reps["iss"].passed
    broken = [n for n, r in reps.items() if n != "iss" and iss_ok and not r.passed]
    return {"passed": not broken,
            "witnesses": [dict(v, property=n) for n in broken for v in reps[n].violations],
            "summary": {n: {"passed": r.passed} for n, r in reps.items()}}


def check_ciucs_cmd(ctx: Context, p: Dict[str, Any]) -> Dict[str, Any]:
    radii = [float(r) for r in p.get("radii", [1.0, 10.0])]
    eps = float(p.get("eps", 1e-3))
    n = int(p.get("samples", 8))
    step = float(p.get("step", 1e-2))
    if ctx.cascade_model is not None:
        reps = cascade.run_ciucs(ctx.cascade_model.scenario, radii, n, eps, step)
    else:
        rng = SplitMix64(int(p.get("seed", ctx.scenario.seed))).spawn(7)
        times = np.arange(0.0, math.floor(ctx.horizon) + 1.0)
        reps = {r: check_ciucs(ctx.system, ctx.schedule, ctx.u,
                               ball_samples(ctx.x0.config, r, n, rng), times, eps, step)
                for r in radii}
    return {"passed": all(r.passed for r in reps.values()),
            "witnesses": [dict(v, r=r) for r, rep in reps.items() for v in rep.violations],
            "summary": {repr(r): {"passed": rep.passed,
                                  "convergence_time": rep.summary["convergence_time"],
                                  "sup_final": rep.summary["sup_final"],
                                  "input_tail_norm": rep.summary["input_tail_norm"],
                                  "hypothesis_met": rep.summary["hypothesis_met"]}
                        for r, rep in reps.items()}}


def check_certificate_cmd(ctx: Context, p: Dict[str, Any]) -> Dict[str, Any]:
    _, gamma = _gains(ctx, p) if ("gamma" not in p) else (None, comparison(p["gamma"], "gamma"))
    cloud = _battery_cloud(ctx, p)
    idx = {s: i for i, s in enumerate(sorted(set(cloud.scenario.tolist()), key=repr))}
    parity = np.array([idx[s] % 2 for s in cloud.scenario])
    train, hold = cloud.select(parity == 0), cloud.select(parity == 1)
    try:
        est, rep = assemble_iss_certificate(train, gamma, holdout=hold if len(hold) else None,
                                            tol=float(p.get("tol", 1e-4)))
    except HypothesisError as exc:
        return {"passed": False, "witnesses": [dict(exc.witness, hypothesis=exc.hypothesis)],
                "summary": {"reason": str(exc)}}
    out = _report(rep) if rep is not None else {"passed": True, "witnesses": [], "summary": {}}
    out["summary"]["gamma"] = gamma.to_dict()
    out["summary"]["r_grid"] = list(est.beta.r_grid)
    return out


CHECKS: Dict[str, Callable[[Context, Dict[str, Any]], Dict[str, Any]]] = {
    "iss": check_iss_cmd, "brs": check_brs_cmd, "uls": check_uls_cmd, "uag": check_uag_cmd,
    "ulim": check_ulim_cmd, "ciucs": check_ciucs_cmd, "gadt": check_gadt_cmd,
    "lyapunov": check_lyapunov_cmd, "axioms": check_axioms_cmd,
    "certificate": check_certificate_cmd, "hierarchy": check_hierarchy_cmd,
}


# --- commands ---------------------------------------------------------------------------


def _header(scn: Scenario) -> Dict[str, Any]:
    return {"tool": "livesys", "version": __version__, "scenario": scn.name,
            "scenario_sha256": scn.sha256}


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


def cmd_check(args) -> int:
    try:
        scn = load(args.scenario)
        ctx = make_context(scn, horizon=args.horizon)
        results = [dict(CHECKS[args.check](ctx, p), params=p) for p in scn.check_params(args.check)]
    except LiveSysError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    passed = all(r["passed"] for r in results)
    report = dict(_header(scn), check=args.check, passed=passed, results=results)
    _emit(dumps(report), args.report or scn.doc.get("output", {}).get("report"))
    return EXIT_OK if passed else EXIT_FALSIFIED


def _pool_csv(cs: cascade.CascadeScenario, horizon: float, step: float, escape: Optional[float],
              out) -> Dict[str, Any]:
    if cs.schedule.kind == "log-shrinking":
        stream = ArrivalStream.log_schedule(cs.direction)
    else:
        stream = ArrivalStream.from_times(cs.impulses(horizon).times, cs.direction,
                                          [cs.magnitude(k) for k in range(1, len(cs.impulses(horizon)) + 1)])
    pool = evolve_pool(cs.A, np.outer(cs.x0, cs.x0), stream, horizon, step)
    norms = pool.pseudonorm()
    V = pool.quadratic(solve_lyapunov(cs.A))
    s = cs.A.shape[0]
    n = len(pool.times)
    status, t_esc = "completed", None
    if escape is not None:
        over = np.flatnonzero(norms > escape)
        if over.size:
            n = int(over[0]) + 1
            status, t_esc = "blowup", float(pool.times[over[0]])
    out.write("t,config_id,dim,pseudonorm,V\n")
    for i in range(n):
        agents = 1 + int(pool.arrivals[i])
        out.write(f"{float(pool.times[i])!r},pool,{agents * s},{float(norms[i])!r},{float(V[i])!r}\n")
    cross = np.flatnonzero(norms[:n] > cs.divergence_threshold)
    return {"status": status, "t_final": float(pool.times[n - 1]), "t_esc": t_esc,
            "rows": n, "engine": "pool", "network_final": float(norms[n - 1]),
            "divergence": {"threshold": cs.divergence_threshold,
                           "t_cross": float(pool.times[cross[0]]) if cross.size else None}}


def cmd_simulate(args) -> int:
    try:
        scn = load(args.scenario)
        H = args.horizon or scn.horizon
        step = args.step or scn.step
        csv_path = args.csv or scn.doc.get("output", {}).get("csv")
        buf = io.StringIO()
        if scn.kind == "cascade" and cascade_scenario(scn).engine == "pool":
            cs = cascade_scenario(scn)
            escape = args.escape if args.escape is not None else scn.escape
            summary = _pool_csv(cs, H, args.step or 1e-2, escape, buf)
        else:
            ctx = make_context(scn, escape=args.escape, horizon=H)
            traj = evolve(ctx.system, ctx.schedule, ctx.x0, ctx.u, H, step)
            extra = {"z": cascade.z_value} if ctx.cascade_model is not None else None
            traj.write_csv(buf, lyapunov=ctx.lyapunov, extra=extra)
            summary = _trajectory_summary(traj, ctx)
    except LiveSysError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    text = buf.getvalue()
    if csv_path and csv_path != "-":
        Path(csv_path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    report = dict(_header(scn), command="simulate", **summary)
    stream = sys.stderr if not csv_path or csv_path == "-" else sys.stdout
    stream.write(dumps(report) + "\n")
    return EXIT_BLOWUP if summary["status"] == "blowup" else EXIT_OK


def _trajectory_summary(traj: Trajectory, ctx: Context) -> Dict[str, Any]:
    if ctx.cascade_model is not None:
        return dict(cascade.trajectory_summary(traj), rows=sum(len(s.times) for s in traj.segments))
    ts, ns = traj.norm_series()
    return {"status": traj.status, "t_final": traj.final_time, "t_esc": traj.t_esc,
            "impulses": len(traj.jumps), "rows": len(ts), "network_sup": float(ns.max()),
            "network_final": float(ns[-1])}


def cmd_list(args) -> int:
    from .scenario import builtin_names
    for name in builtin_names():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="livesys", description="Simulate live systems and "
                                     "check stability properties from scenario files.")
    parser.add_argument("--version", action="version", version=f"livesys {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario and write the trajectory CSV")
    sim.add_argument("scenario", help="scenario file or built-in name")
    sim.add_argument("--horizon", type=float, help="override the scenario horizon")
    sim.add_argument("--step", type=float, help="override the integrator step")
    sim.add_argument("--csv", help="CSV output path ('-' for stdout)")
    sim.add_argument("--escape", type=float,
                     help="escape threshold on the pseudonorm; crossing it exits with code 2")
    sim.set_defaults(func=cmd_simulate)

    chk = sub.add_parser("check", help="run one property check")
    chk.add_argument("scenario", help="scenario file or built-in name")
    chk.add_argument("--check", required=True, choices=sorted(CHECKS))
    chk.add_argument("--horizon", type=float, help="override the scenario horizon")
    chk.add_argument("--report", help="write the JSON report here instead of stdout")
    chk.set_defaults(func=cmd_check)

    lst = sub.add_parser("list", help="list built-in scenarios")
    lst.set_defaults(func=cmd_list)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
