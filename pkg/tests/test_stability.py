import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from livesys.comparison import ExpKL, KLTable, Power, Zero, check_class, linear
from livesys.core_state import Configuration, LiveState, pseudonorm
from livesys.errors import HypothesisError
from livesys.flow_engine import ImpulseSchedule, LiveSystemDefinition, evolve
from livesys.rng import SplitMix64
from livesys.signals import Channel, ExpDecay, InputSignal, constant_signal
from livesys.stability import (EmpiricalG, SampleCloud, assemble_iss_certificate, ball_samples,
                               check_brs, check_ciucs, check_hierarchy, check_iss, check_uag,
                               check_ulim, check_uls, combine_gains, common_lattice,
                               counterexample_g, counterexample_tau, iss_implied_parameters,
                               kl_majorant, time_to_level)

CFG = Configuration("x", (1,), (1,))
SCALAR = LiveSystemDefinition({CFG.id: CFG}, {CFG.id: lambda t, x, u: -x + u[1]})
LATTICE = np.linspace(0.0, 8.0, 81)


def synthetic_cloud(x0s, us, decay=1.0, lattice=LATTICE):
    """Records of ``|phi| = |x0| e^{-decay t} + |u| (1 - e^{-t})``."""
    cols = {k: [] for k in ("x0", "u", "t", "phi", "sc")}
    for i, (a, b) in enumerate(zip(x0s, us)):
        cols["x0"] += [a] * len(lattice)
        cols["u"] += [b] * len(lattice)
        cols["t"] += list(lattice)
        cols["phi"] += list(a * np.exp(-decay * lattice) + b * (1 - np.exp(-lattice)))
        cols["sc"] += [f"s{i}"] * len(lattice)
    sc = np.empty(len(cols["sc"]), dtype=object)
    sc[:] = cols["sc"]
    return SampleCloud(np.array(cols["x0"]), np.array(cols["u"]), np.array(cols["t"]),
                       np.array(cols["phi"]), sc)


def test_iss_pass_and_fail():
    cloud = synthetic_cloud([1.0, 3.0], [0.0, 2.0])
    assert check_iss(cloud, ExpKL(1.0, 1.0, 1.0), linear(1.0)).passed
    rep = check_iss(cloud, ExpKL(1.0, 1.0, 2.0), linear(1.0))
    assert not rep.passed and rep.violations[0]["observed"] > rep.violations[0]["bound"]
    assert rep.summary["count"] > 0


def test_escape_falsifies_everything():
    blown = SampleCloud.merge([synthetic_cloud([1.0], [0.0]),
                               SampleCloud(*(np.zeros(0),) * 4, np.zeros(0, dtype=object),
                                           (("bad", 1.0, 0.0, 0.3),))])
    assert not check_iss(blown, ExpKL(1.0, 1.0, 1.0), linear(1.0)).passed
    assert not check_brs(blown, [(2.0, 1.0)]).passed
    assert check_brs(blown, [(2.0, 0.2)]).passed


def test_brs_bound_and_uls():
    cloud = synthetic_cloud([1.0, 2.0], [0.5, 0.5])
    assert check_brs(cloud, [(2.0, 5.0)], bound=linear(1.5)).passed
    assert not check_brs(cloud, [(2.0, 5.0)], bound=linear(0.5)).passed
    assert check_uls(cloud, linear(1.0), linear(1.0), r=2.0).passed
    assert not check_uls(cloud, linear(0.5), Zero(), r=2.0).passed


def test_uag_and_ulim_with_exact_tau():
    cloud = synthetic_cloud([1.0, 4.0], [0.0, 0.0])
    tau = lambda eps, r: max(math.log(r / eps), 0.0)
    assert check_uag(cloud, linear(1.0), tau, [(0.1, 4.0)]).passed
    assert not check_uag(cloud, linear(1.0), lambda e, r: 0.0, [(0.1, 4.0)]).passed
    snapped = lambda eps, r: LATTICE[np.searchsorted(LATTICE, tau(eps, r))]
    assert check_ulim(cloud, linear(1.0), snapped, [(0.1, 4.0)]).passed
    rep = check_ulim(cloud, linear(1.0), lambda e, r: 0.5, [(0.1, 4.0)])
    assert not rep.passed and {v["scenario"] for v in rep.violations} == {"s0", "s1"}
    with pytest.raises(ValueError):
        check_uag(cloud, linear(1.0), lambda e, r: math.inf, [(0.1, 1.0)])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0.0, 5.0), st.floats(0.0, 2.0)), min_size=1, max_size=5),
       st.floats(0.5, 3.0), st.floats(0.5, 2.0))
def test_iss_implies_weaker_properties(runs, a, rate):
    cloud = synthetic_cloud([r[0] for r in runs], [r[1] for r in runs], decay=1.0)
    beta, gamma = ExpKL(a, 1.0, rate), linear(1.0)
    reps = check_hierarchy(cloud, beta, gamma, pairs=[(0.5, 5.0), (0.05, 2.0), (1.0, 1.0)],
                           r=5.0, groups=[(5.0, 8.0)])
    if reps["iss"].passed:
        for name in ("uag", "ulim", "uls", "brs"):
            assert reps[name].passed, (name, reps[name].violations)


def test_implied_tau_snaps_to_lattice():
    p = iss_implied_parameters(ExpKL(1.0, 1.0, 1.0), linear(1.0), LATTICE)
    t = p.tau(0.1, 1.0)
    assert t in LATTICE and t >= math.log(10.0) and t - math.log(10.0) < 0.1
    with pytest.raises(ValueError):
        p.tau(1e-9, 1.0)
    assert p.sigma(2.0) == 2.0
    assert time_to_level(ExpKL(1.0, 1.0, 1.0), 2.0, 1.0) == 0.0
    assert common_lattice(synthetic_cloud([1.0, 2.0], [0.0, 0.0])).tolist() == LATTICE.tolist()


def test_combine_gains():
    g = combine_gains(linear(1.0), Zero(), Power(0.5, 2.0))
    assert g(1.0) == 1.0 and g(4.0) == 8.0
    assert isinstance(combine_gains(Zero()), Zero)


def test_kl_majorant_dominates_decay():
    g = lambda s, t: np.asarray(s) * np.exp(-np.asarray(t))
    tau = lambda eps, r: max(math.log(r / eps), 0.0) if r > 0 else 0.0
    s_eval = np.linspace(0.0, 10.0, 50)
    t_eval = np.linspace(0.0, 20.0, 50)
    beta = kl_majorant(g, linear(1.0), 1.0, tau, np.linspace(0.2, 10.0, 50), s_eval, t_eval)
    S, T = np.meshgrid(s_eval, t_eval, indexing="ij")
    assert np.all(g(S, T) <= beta(S, T))
    sigma = beta.sigma
    assert np.all(beta(S, T) <= 2.0 * np.asarray(sigma(S)) + 1e-12)
    ok, problems = check_class(beta, s_eval, t_eval)
    assert ok, problems


def test_kl_majorant_rejects_unbounded_function():
    with pytest.raises(HypothesisError) as err:
        kl_majorant(counterexample_g, linear(1.0), 0.5, counterexample_tau,
                    [0.5, 1.0, 2.0], np.linspace(0.0, 2.0, 41), np.linspace(0.0, 5.0, 51))
    e = err.value
    assert e.hypothesis == "iii"
    assert e.witness["r"] == 1.0
    assert e.witness["t"] >= 0.999
    assert e.witness["value"] >= 1e3


def test_kl_majorant_flags_wrong_oracle_and_small_radius():
    g = lambda s, t: np.asarray(s) * np.exp(-np.asarray(t))
    with pytest.raises(HypothesisError) as err:
        kl_majorant(g, linear(1.0), 1.0, lambda e, r: 0.0, [1.0, 2.0], [0.0, 1.0, 2.0], [0.0, 1.0])
    assert err.value.hypothesis == "i"
    with pytest.raises(HypothesisError) as err:
        kl_majorant(g, linear(0.5), 1.0, lambda e, r: 10.0, [1.0], [0.0, 1.0], [0.0, 1.0])
    assert err.value.hypothesis == "ii"


def _scalar_runs(rng, n, tag):
    clouds = []
    for i in range(n):
        x0 = float(rng.uniform(-4.0, 4.0))
        u = float(rng.uniform(-1.0, 1.0))
        traj = evolve(SCALAR, ImpulseSchedule(), LiveState(CFG, [x0]),
                      constant_signal([u], agents=[1]), 8.0, 1e-2)
        clouds.append(SampleCloud.from_trajectory(traj, abs(x0), abs(u), f"{tag}{i}"))
    return SampleCloud.merge(clouds)


def test_certificate_for_scalar_decay():
    rng = SplitMix64(5)
    fit, holdout = _scalar_runs(rng, 20, "fit"), _scalar_runs(rng, 10, "hold")
    est, rep = assemble_iss_certificate(fit, linear(1.0), holdout=holdout)
    assert est.validate(fit).passed
    assert isinstance(est.beta, KLTable)
    # the holdout may exceed the fitted radii; the KL extension covers it
    assert rep.summary["records"] == len(holdout)
    assert rep.passed, rep.violations[:3]


def test_empirical_g_table():
    cloud = synthetic_cloud([1.0, 2.0], [0.0, 0.0])
    g = EmpiricalG.from_cloud(cloud, Zero())
    assert g(2.0, 0.0) == pytest.approx(2.0)
    assert g(1.5, 0.0) == pytest.approx(1.0)
    assert g(2.0, 100.0) == 0.0
    assert g.tau(2.0 * math.exp(-3.0) + 1e-12, 2.0) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        g.tau(1e-9, 2.0)


def test_ciucs_scalar():
    u = InputSignal({1: Channel.single(ExpDecay([1.0], 1.0))})
    states = ball_samples(CFG, 5.0, 4, SplitMix64(1))
    assert all(pseudonorm(x) == pytest.approx(5.0) for x in states[1:])
    rep = check_ciucs(SCALAR, ImpulseSchedule(), u, states, np.linspace(0.0, 20.0, 41), eps=1e-3)
    assert rep.passed
    assert rep.summary["hypothesis_met"]
    assert rep.summary["sup_final"] < 1e-3
