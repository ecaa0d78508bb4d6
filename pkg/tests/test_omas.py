import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from livesys.core_state import LiveState, pseudonorm
from livesys.errors import AdmissibilityError, DefinitionError
from livesys.flow_engine import ImpulseSchedule, evolve
from livesys.omas import (ArrivalStream, FunctionAgent, LinearAgent, OmasDefinition, SwitchingSignal,
                          apply_impulse, compile, evolve_pool, fixed_configuration, switched_system,
                          uniform_gain_probe)
from livesys.signals import InputValue, arrival_signal, zero_signal


def decay_omas(**kw):
    return OmasDefinition({}, {1}, default_agent=LinearAgent([[-1.0]]), **kw)


def test_arrival_block_reads_own_channel():
    omas = decay_omas(arrivals={1: {2}})
    sched = ImpulseSchedule.explicit([1.0])
    sys = compile(omas, sched)
    x0 = LiveState(omas.configuration({1}), [1.0])
    u = arrival_signal({2: (1.0, [3.0])})
    traj = evolve(sys, sched, x0, u, 2.0, 1e-3)
    post = traj.state_at(1.0)
    assert post.config.agents == (1, 2)
    assert pseudonorm(post) == pytest.approx(math.sqrt(math.exp(-2.0) + 9.0), abs=1e-12)
    assert traj.final_state.data.tolist() == pytest.approx([math.exp(-2.0), 3 * math.exp(-1.0)], abs=1e-11)


def test_departure_drops_block_and_survivor_map_applies():
    half = lambda pre, u_left, agent: 0.5 * pre.block(agent)
    omas = decay_omas(arrivals={1: {2}}, departures={2: {1}}, survivors={2: half})
    sched = ImpulseSchedule.explicit([1.0, 2.0])
    sys = compile(omas, sched)
    u = arrival_signal({2: (1.0, [4.0])})
    traj = evolve(sys, sched, LiveState(omas.configuration({1}), [1.0]), u, 3.0, 1e-3)
    after = traj.state_at(2.0)
    assert after.config.agents == (2,)
    assert after.data[0] == pytest.approx(0.5 * 4.0 * math.exp(-1.0), abs=1e-11)


@pytest.mark.parametrize("arrivals,departures,k", [
    ({1: {1}}, {}, 1),
    ({}, {2: {5}}, 2),
    ({}, {1: {1}}, 1),
])
def test_inadmissible_impulses_name_the_index(arrivals, departures, k):
    omas = decay_omas(arrivals=arrivals, departures=departures)
    with pytest.raises(AdmissibilityError) as err:
        compile(omas, ImpulseSchedule.explicit([1.0, 2.0]))
    assert err.value.impulse_index == k


def test_definition_errors():
    with pytest.raises(DefinitionError):
        OmasDefinition({}, set())
    with pytest.raises(DefinitionError):
        OmasDefinition({1: LinearAgent([[-1.0]])}, {1}).configuration({2})
    with pytest.raises(DefinitionError):
        LinearAgent(np.zeros((2, 3)))


def test_missing_arrival_channel_is_an_input_error():
    from livesys.errors import InputError
    omas = decay_omas(arrivals={1: {2}})
    x = LiveState(omas.configuration({1}), [1.0])
    with pytest.raises(InputError):
        apply_impulse(omas, x, 1, InputValue({}), InputValue({}))


def test_function_agent_coupling():
    # agent 2 is driven by agent 1's state
    omas = OmasDefinition({1: LinearAgent([[-1.0]]),
                           2: FunctionAgent(1, lambda t, x, u: -x.block(2) + x.block(1))}, {1, 2})
    sys = fixed_configuration(omas, {1, 2})
    cfg = omas.configuration({1, 2})
    traj = evolve(sys, ImpulseSchedule(), LiveState(cfg, [1.0, 0.0]), zero_signal(), 1.0, 1e-3)
    # x2(t) = t e^{-t}
    assert traj.final_state.data[1] == pytest.approx(math.exp(-1.0), abs=1e-11)


def test_linear_agent_with_input_matrix():
    omas = OmasDefinition({1: LinearAgent([[-1.0]], B=[[2.0]])}, {1})
    from livesys.signals import constant_signal
    sys = fixed_configuration(omas, {1})
    traj = evolve(sys, ImpulseSchedule(), LiveState(omas.configuration({1}), [0.0]),
                  constant_signal([1.0], agents=[1]), 1.0, 1e-3)
    assert traj.final_state.data[0] == pytest.approx(2 * (1 - math.exp(-1.0)), abs=1e-11)


def test_switched_system_value():
    sigma = SwitchingSignal((0.0, 1.0), (0, 1))
    omas = switched_system({0: [[-1.0]], 1: [[-2.0]]}, sigma)
    sched = sigma.schedule()
    sys = compile(omas, sched)
    traj = evolve(sys, sched, LiveState(omas.configuration({0}), [1.0]), zero_signal(), 2.0, 1e-3)
    assert abs(traj.final_state.data[0] - math.exp(-3.0)) <= 1e-8
    assert sigma.value(0.999) == 0 and sigma.value(1.0) == 1


def test_switched_system_rejects_self_switch_and_bad_modes():
    with pytest.raises(AdmissibilityError):
        switched_system({0: [[-1.0]]}, SwitchingSignal((0.0, 1.0), (0, 0)))
    with pytest.raises(DefinitionError):
        switched_system({0: [[-1.0]], 1: [[-1.0, 0], [0, -1]]}, SwitchingSignal((0.0, 1.0), (0, 1)))
    with pytest.raises(DefinitionError):
        switched_system({0: [[-1.0]]}, SwitchingSignal((0.0, 1.0), (0, 3)))


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.05, 2.0), min_size=1, max_size=6),
       st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_pool_engine_matches_per_agent_engine(gaps, mags):
    times = list(np.cumsum(gaps))
    horizon = times[-1] + 0.5
    A = np.array([[-1.0, 2.0], [-2.0, -1.0]])
    vec = np.array([1.0, 0.5])
    m = mags[:len(times)]
    stream = ArrivalStream.from_times(times, vec, m)
    pool = evolve_pool(A, np.outer([1.0, -1.0], [1.0, -1.0]), stream, horizon, step=1e-2,
                       sample_times=times)
    omas = OmasDefinition({}, {0}, arrivals={k + 1: {k + 1} for k in range(len(times))},
                          default_agent=LinearAgent(A))
    sched = ImpulseSchedule.explicit(times)
    u = arrival_signal({k + 1: (t, m[k] * vec) for k, t in enumerate(times)})
    traj = evolve(compile(omas, sched), sched, LiveState(omas.configuration({0}), [1.0, -1.0]),
                  u, horizon, 1e-2)
    assert pool.arrivals[-1] == len(times)
    assert pool.pseudonorm()[-1] == pytest.approx(pseudonorm(traj.final_state), rel=1e-6)


def test_pool_engine_closed_form_scalar():
    # A = -1, arrivals of unit vectors at t = 1..5: G(T) = e^{-2T} + sum e^{-2(T - t_k)}
    times = [1.0, 2.0, 3.0, 4.0, 5.0]
    pool = evolve_pool([[-1.0]], [[1.0]], ArrivalStream.from_times(times, [1.0]), 6.0, step=1e-3)
    exact = math.exp(-12.0) + sum(math.exp(-2 * (6.0 - t)) for t in times)
    assert pool.grams[-1, 0, 0] == pytest.approx(exact, rel=1e-10)
    assert pool.quadratic([[0.5]])[-1] == pytest.approx(0.5 * exact, rel=1e-10)


def test_log_schedule_stream_counts():
    s = ArrivalStream.log_schedule([1.0])
    assert s.times_in(0.0, 3.0).size == int(math.exp(3.0)) - 1
    assert s.times_in(1.0, 1.0).size == 0


def test_uniform_gain_probe_max():
    omas = OmasDefinition({1: LinearAgent([[-1.0]]), 2: LinearAgent([[-3.0]])}, {1})
    vals, worst = uniform_gain_probe(omas, [{1}, {2}, {1, 2}],
                                     lambda sys, cfg: -max(np.linalg.eigvals(
                                         np.diag([omas.spec(a).A[0, 0] for a in cfg.agents])).real))
    assert worst == 3.0 and vals[(1,)] == 1.0
