import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from livesys.errors import DefinitionError, NumericalError
from livesys.numerics import (lyapunov_residual, rk4_integrate, rk4_step, snapped_grid,
                              solve_lyapunov, sym_eig_extremes)
from livesys.rng import SplitMix64, random_hurwitz


def test_rk4_scalar_decay():
    _, xs = rk4_integrate(lambda t, x: -x, [1.0], 0.0, 1.0, step=1e-3)
    assert abs(xs[-1, 0] - math.exp(-1.0)) < 1e-12


def test_rk4_is_fourth_order():
    f = lambda t, x: np.array([x[1], -x[0]])
    errs = []
    for h in (0.1, 0.05, 0.025):
        _, xs = rk4_integrate(f, [1.0, 0.0], 0.0, 2.0, step=h)
        errs.append(abs(xs[-1, 0] - math.cos(2.0)))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(3.8 < p < 4.2 for p in orders)


def test_rk4_time_dependent_field():
    _, xs = rk4_integrate(lambda t, x: np.array([math.cos(t)]), [0.0], 0.0, 3.0, step=1e-2)
    assert abs(xs[-1, 0] - math.sin(3.0)) < 1e-10


def test_rk4_non_finite_raises():
    with pytest.raises(NumericalError) as err:
        rk4_step(lambda t, x: np.array([math.inf]), 0.25, np.zeros(1), 0.1)
    assert err.value.t == 0.25


def test_snapped_grid():
    g = snapped_grid(0.0, 1.0, 0.3)
    assert g[0] == 0.0 and g[-1] == 1.0 and np.all(np.diff(g) <= 0.3)
    assert len(snapped_grid(0.0, 1.0, 1e-3)) == 1001
    with pytest.raises(ValueError):
        snapped_grid(1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        rk4_integrate(lambda t, x: x, [1.0], 0.0, 1.0, grid=[0.0, 0.7, 0.5, 1.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 8))
def test_lyapunov_against_scipy(seed, s):
    A = random_hurwitz(SplitMix64(seed), s)
    P = solve_lyapunov(A)
    ref = scipy.linalg.solve_continuous_lyapunov(A.T, -np.eye(s))
    assert np.allclose(P, ref, rtol=1e-8, atol=1e-10)
    assert lyapunov_residual(P, A) <= 1e-8
    assert np.array_equal(P, P.T)


def test_lyapunov_scalar_and_rejection():
    assert solve_lyapunov([[-1.0]])[0, 0] == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(DefinitionError):
        solve_lyapunov([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(DefinitionError):
        solve_lyapunov([[0.0]])
    with pytest.raises(ValueError):
        solve_lyapunov(np.ones((2, 3)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 8))
def test_eig_extremes_against_numpy(seed, s):
    M = SplitMix64(seed).normal(size=(s, s))
    S = M + M.T
    lo, hi = sym_eig_extremes(S)
    ref = np.linalg.eigvalsh(S)
    assert abs(lo - ref[0]) <= 1e-10 * max(1.0, abs(ref[0]))
    assert abs(hi - ref[-1]) <= 1e-10 * max(1.0, abs(ref[-1]))


def test_eig_extremes_edge_cases():
    assert sym_eig_extremes(np.zeros((3, 3))) == (0.0, 0.0)
    assert sym_eig_extremes([[2.0]]) == (2.0, 2.0)
    with pytest.raises(ValueError):
        sym_eig_extremes([[1.0, 2.0], [0.0, 1.0]])


def test_constant_field_and_rotation_period():
    _, xs = rk4_integrate(lambda t, x: np.zeros(2), [1.5, -2.0], 0.0, 3.0, step=0.1)
    assert np.array_equal(xs[-1], [1.5, -2.0])
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    _, xs = rk4_integrate(lambda t, x: A @ x, [1.0, 0.0], 0.0, 2 * math.pi, step=1e-3)
    assert np.max(np.abs(xs[-1] - [1.0, 0.0])) <= 1e-6


def test_lyapunov_small_cases():
    assert np.allclose(solve_lyapunov(-np.eye(2)), 0.5 * np.eye(2), atol=1e-15)
    A = np.array([[-1.0, 1.0], [0.0, -1.0]])
    P = solve_lyapunov(A)
    assert lyapunov_residual(P, A) <= 1e-8
    assert sym_eig_extremes(P)[0] > 0.0


@pytest.mark.parametrize("P,expected", [
    (0.5 * np.eye(2), (0.5, 0.5)),
    (np.diag([1.0, 4.0]), (1.0, 4.0)),
    (np.array([[2.0, 1.0], [1.0, 2.0]]), (1.0, 3.0)),
])
def test_eig_extremes_small_cases(P, expected):
    assert sym_eig_extremes(P) == pytest.approx(expected, abs=1e-14)
