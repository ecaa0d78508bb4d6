"""Exit criteria of the artifact, one test per criterion.

Each test prints a PASS/FAIL line (also collected in the terminal summary)
and asserts its runtime budget.
"""

import json
import math
import time

import numpy as np
import pytest

from livesys import comparison as cf
from livesys.cli import main
from livesys.core_state import Configuration, LiveState, pseudonorm, scale
from livesys.errors import AdmissibilityError, HypothesisError
from livesys.example_cascade import (CascadeScenario, battery, battery_cloud, build, builtin,
                                     run_case_study, run_ciucs, run_divergence)
from livesys.flow_engine import ImpulseSchedule, ScheduleSpec, evolve
from livesys.lyapunov import check_gadt, exp_budget, exponential_iss_gains
from livesys.numerics import lyapunov_residual, solve_lyapunov, sym_eig_extremes
from livesys.omas import SwitchingSignal, compile, switched_system
from livesys.rng import SplitMix64, random_hurwitz
from livesys.scenario import build_linear, parse
from livesys.signals import signal_norm, zero_signal
from livesys.stability import (SampleCloud, check_hierarchy, counterexample_g, counterexample_tau,
                               kl_majorant)
from oracles import brute_force_gadt, log_schedule_norm
from scenario_factory import random_linear_scenario, write

C, D = 2.0, -math.log(2.0)


def within(start, budget):
    elapsed = time.perf_counter() - start
    assert elapsed <= budget, f"runtime {elapsed:.1f} s exceeds {budget} s"


@pytest.mark.acceptance(1, "control-system axioms on 100 random live systems")
def test_axioms_on_random_scenarios(criterion, tmp_path):
    start = time.perf_counter()
    worst, configs = 0.0, set()
    for seed in range(100):
        doc = random_linear_scenario(seed)
        path = write(doc, tmp_path / f"s{seed}.json")
        configs.add(len(build_linear(parse(json.dumps(doc))).system.configurations))
        rep = tmp_path / f"r{seed}.json"
        code = main(["check", path, "--check", "axioms", "--report", str(rep)])
        summary = json.loads(rep.read_text())["results"][0]["summary"]
        assert code == 0, (seed, summary)
        assert summary["identity"]["passed"] and summary["causality"]["passed"]
        worst = max(worst, summary["cocycle"]["max_discrepancy"])
    assert worst <= 1e-9
    assert configs <= {2, 3, 4, 5} and len(configs) >= 3
    within(start, 60)


@pytest.mark.acceptance(2, "pseudonorm positivity, definiteness, homogeneity on 1e4 states")
def test_pseudonorm_properties(criterion):
    start = time.perf_counter()
    rng = SplitMix64(11)
    shapes = [Configuration.omas(range(1, n + 1), lambda a, n=n: 1 + (a + n) % 3) for n in range(1, 6)]
    for i in range(10_000):
        cfg = shapes[i % len(shapes)]
        data = rng.normal(cfg.dim) * 10.0 ** float(rng.uniform(-6, 6))
        if i % 97 == 0:
            data = np.zeros(cfg.dim)
        x = LiveState(cfg, data)
        n = pseudonorm(x)
        assert n >= 0.0
        assert (n == 0.0) == (not np.any(data))
        lam = float(rng.uniform(-1e3, 1e3))
        assert abs(pseudonorm(scale(lam, x)) - abs(lam) * n) <= 1e-12 * abs(lam) * n
    within(start, 5)


@pytest.mark.acceptance(3, "KL-majorant on s e^-t and rejection of the unbounded counterexample")
def test_kl_majorant(criterion):
    start = time.perf_counter()
    g = lambda s, t: np.asarray(s) * np.exp(-np.asarray(t))
    tau = lambda eps, r: max(math.log(r / eps), 0.0)
    s_grid = np.linspace(0.0, 10.0, 50)
    t_grid = np.linspace(0.0, 20.0, 50)
    beta = kl_majorant(g, cf.linear(1.0), 1.0, tau, np.linspace(0.2, 10.0, 50), s_grid, t_grid)
    S, T = np.meshgrid(s_grid, t_grid, indexing="ij")
    assert int(np.sum(g(S, T) > beta(S, T))) == 0
    assert np.all(beta(S, T) <= 2.0 * np.asarray(beta.sigma(S)))
    with pytest.raises(HypothesisError) as err:
        kl_majorant(counterexample_g, cf.linear(1.0), 0.5, counterexample_tau, [0.5, 1.0, 2.0],
                    np.linspace(0.0, 2.0, 41), np.linspace(0.0, 5.0, 51))
    w = err.value.witness
    assert err.value.hypothesis == "iii"
    assert w["r"] == 1.0 and w["t"] >= 0.999 and w["value"] >= 1e3
    within(start, 10)


@pytest.mark.acceptance(4, "case study, admissible schedule")
def test_case_study_admissible(criterion):
    start = time.perf_counter()
    rep = run_case_study(builtin("cascade-admissible"), battery_size=20, iss_tol=1e-4)
    assert abs(rep.P[0][0] - 0.5) <= 1e-12
    assert abs(rep.lam_max - 0.5) <= 1e-12
    assert abs(rep.c - 2.0) <= 1e-12
    assert abs(rep.d + math.log(2.0)) <= 1e-12
    assert rep.gadt["passed"] and rep.gadt["horizon"] == 50.0
    assert brute_force_gadt(ImpulseSchedule.periodic(1.0, 50.0).times, C, D, lambda x: 1.0 - x, 50.0)
    checks = rep.checks
    assert checks["jump_identity"]["max_error"] <= 1e-12
    assert checks["flow_decay"]["max_ratio"] <= 1.0 + 1e-6
    assert checks["lyapunov"]["passed"]
    assert checks["iss"]["passed"] and not checks["iss"]["violations"]
    assert checks["certificate"]["passed"]
    assert rep.passed, {k: v.get("passed") for k, v in checks.items()}
    within(start, 120)


@pytest.mark.acceptance(5, "case study, divergence under shrinking gaps")
def test_case_study_divergence(criterion):
    start = time.perf_counter()
    out = run_divergence(builtin("cascade-divergent"), check_times=(20.0,))
    assert out["t_cross"] is not None and out["t_cross"] < 25.0
    oracle = log_schedule_norm(20.0)
    assert abs(out["norm_at"]["20.0"] - oracle) <= 0.05 * oracle
    within(start, 60)


@pytest.mark.acceptance(6, "gADT verdicts equal the brute-force evaluation")
def test_gadt_exactness(criterion):
    start = time.perf_counter()
    budget = exp_budget(math.e, 1.0)
    log_h = lambda x: 1.0 - x
    for sched, horizon, expected in ((ImpulseSchedule.periodic(1.0, 50.0), 50.0, True),
                                     (ImpulseSchedule.log_shrinking(5.0), 5.0, False)):
        got = check_gadt(sched, C, D, budget, horizon).admissible
        assert got == brute_force_gadt(sched.times, C, D, log_h, horizon) == expected
    within(start, 10)


def _hierarchy_clouds():
    scn = CascadeScenario("battery", np.array([[-1.0]]), ScheduleSpec("periodic", 1.0), 15.0)
    model = build(scn)
    clouds = [battery_cloud(model, battery(model, 10, seed=77), step=1e-2)]
    rng = SplitMix64(99)
    for seed in range(3):
        lin = build_linear(parse(json.dumps(random_linear_scenario(500 + seed, horizon=6.0))))
        lattice = np.linspace(0.0, 6.0, 61)
        parts = []
        for j in range(6):
            x0 = LiveState(lin.x0.config, lin.x0.data * float(rng.uniform(0.0, 1.5)))
            traj = evolve(lin.system, lin.schedule, x0, lin.u, 6.0, 1e-2, sample_times=lattice)
            parts.append(SampleCloud.from_trajectory(traj, pseudonorm(x0), signal_norm(lin.u),
                                                     f"lin{seed}-{j}", lattice=lattice))
        clouds.append(SampleCloud.merge(parts))
    return model, clouds


@pytest.mark.acceptance(7, "ISS pass implies UAG, ULIM, ULS and BRS pass")
def test_hierarchy_implications(criterion):
    model, clouds = _hierarchy_clouds()
    beta_l, gamma_l = exponential_iss_gains(model.lyapunov, model.budget)
    candidates = [(beta_l, gamma_l)]
    for a in (0.5, 1.0, 1.65, 3.0):
        for rate in (0.5, 1.0, 2.0):
            for gain in (0.5, 1.0, 2.5, 4.0):
                candidates.append((cf.ExpKL(a, 1.0, rate), cf.linear(gain)))
    passes, counterexamples = 0, []
    for ci, cloud in enumerate(clouds):
        for bi, (beta, gamma) in enumerate(candidates):
            reps = check_hierarchy(cloud, beta, gamma, pairs=[(0.5, 2.0), (0.1, 2.0), (0.05, 1.0)],
                                   r=2.0, groups=[(2.0, 6.0)])
            if reps["iss"].passed:
                passes += 1
                for name in ("uag", "ulim", "uls", "brs"):
                    if not reps[name].passed:
                        counterexamples.append((ci, bi, name))
    assert passes > 0
    assert counterexamples == []


@pytest.mark.acceptance(8, "convergent input gives uniformly convergent state, r in {1, 10}")
def test_ciucs(criterion):
    start = time.perf_counter()
    reps = run_ciucs(builtin("cascade-ciucs"), radii=(1.0, 10.0))
    for r, rep in reps.items():
        assert rep.passed, (r, rep.violations)
        assert rep.summary["convergence_time"] is not None and rep.summary["sup_final"] < 1e-3
    within(start, 30)


@pytest.mark.acceptance(9, "switched system as an OMAS of singleton configurations")
def test_switched_reduction(criterion):
    sigma = SwitchingSignal((0.0, 1.0), (0, 1))
    omas = switched_system({0: [[-1.0]], 1: [[-2.0]]}, sigma)
    sched = sigma.schedule()
    traj = evolve(compile(omas, sched), sched, LiveState(omas.configuration({0}), [1.0]),
                  zero_signal(), 2.0, 1e-3)
    assert abs(traj.final_state.data[0] - math.exp(-3.0)) <= 1e-8
    with pytest.raises(AdmissibilityError):
        switched_system({0: [[-1.0]], 1: [[-2.0]]}, SwitchingSignal((0.0, 1.0, 2.0), (0, 1, 1)))


@pytest.mark.acceptance(10, "Lyapunov solve and eigenvalue extremes on 100 random Hurwitz matrices")
def test_numerics(criterion):
    rng = SplitMix64(2024)
    for i in range(100):
        s = 1 + i % 8
        A = random_hurwitz(rng, s)
        P = solve_lyapunov(A)
        assert lyapunov_residual(P, A) <= 1e-8
        lo, hi = sym_eig_extremes(P)
        ref = np.linalg.eigvalsh(P)
        assert abs(lo - ref[0]) <= 1e-10 * max(1.0, abs(ref[0]))
        assert abs(hi - ref[-1]) <= 1e-10 * max(1.0, abs(ref[-1]))
