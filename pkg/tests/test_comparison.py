import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from livesys.comparison import (DecayComposition, ExpKL, ExpL, KLTable, LTable, MaxGain,
                                PiecewiseLinearK, Power, ScaledComposition, SumGain, Zero,
                                check_class, from_dict, linear)

R = np.linspace(0.0, 20.0, 201)
T = np.linspace(0.0, 30.0, 121)

SAMPLES = [
    Zero(),
    Power(2.0, 0.5),
    linear(3.0),
    ExpL(2.0, 0.5),
    ExpKL(1.5, 2.0, 0.3),
    PiecewiseLinearK((0.0, 1.0, 2.0), (0.0, 0.5, 3.0), 2.0),
    MaxGain((linear(1.0), Power(0.5, 2.0))),
    SumGain((linear(1.0), Power(0.5, 2.0))),
    LTable((0.0, 1.0, 3.0), (4.0, 2.0, 0.1)),
    ScaledComposition(Power(1.0, 0.5), linear(2.0), 3.0),
    DecayComposition(Power(2.0, 0.5), Power(1.0, 2.0), ExpL(math.e, 1.0)),
    KLTable((0.5, 2.0), (LTable((0.0, 1.0), (1.0, 0.5)), LTable((0.0, 1.0), (3.0, 0.2))), linear(1.0)),
]


@pytest.mark.parametrize("fn", SAMPLES, ids=lambda f: type(f).__name__)
def test_class_membership_and_round_trip(fn):
    ok, problems = check_class(fn, R, T)
    assert ok, problems
    back = from_dict(fn.to_dict())
    assert back.to_dict() == fn.to_dict()
    if fn.kind == "KL":
        rr, tt = np.meshgrid(R, T, indexing="ij")
        assert np.array_equal(back(rr, tt), fn(rr, tt))
    else:
        assert np.array_equal(back(R), fn(R))


def test_check_class_flags_violations():
    shifted = ScaledComposition(linear(1.0), Zero(), 1.0)
    ok, problems = check_class(shifted, R)
    assert not ok and "not strictly increasing" in problems
    bad_l = Power(1.0)
    object.__setattr__(bad_l, "kind", "L")
    assert not check_class(bad_l, [1.0, 2.0])[0]
    with pytest.raises(ValueError):
        from_dict({"id": "mystery"})


def test_constructor_validation():
    for make in (lambda: Power(0.0), lambda: ExpL(1.0, 0.0), lambda: ExpKL(1.0, 1.0, -1.0),
                 lambda: PiecewiseLinearK((0.0, 1.0), (0.0, 0.0), 1.0),
                 lambda: LTable((0.0, 1.0), (1.0, 1.0)), lambda: LTable((1.0,), (1.0,)),
                 lambda: KLTable((0.0,), (LTable((0.0,), (1.0,)),), linear(1.0))):
        with pytest.raises(ValueError):
            make()


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.2, 4.0), st.floats(0.0, 100.0))
def test_power_inverse(a, p, s):
    f = Power(a, p)
    assert f.inverse()(f(s)) == pytest.approx(s, rel=1e-9, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.1, 3.0), st.floats(0.01, 50.0), st.floats(1e-3, 10.0))
def test_time_to_level(a, rate, r, eps):
    b = ExpKL(a, 1.0, rate)
    t = b.time_to(eps, r)
    assert b(r, t) <= eps * (1 + 1e-9)
    if t > 0:
        assert b(r, t * (1 - 1e-6) - 1e-12) > eps * (1 - 1e-6)
    d = DecayComposition(Power(1.0 / a, 0.5), Power(a, 2.0), ExpL(1.0, rate))
    td = d.time_to(eps, r)
    assert d(r, td) <= eps * (1 + 1e-9)


def test_ltable_interpolates_geometrically():
    L = LTable((0.0, 2.0), (8.0, 2.0))
    assert L(1.0) == pytest.approx(4.0)
    assert L(4.0) == pytest.approx(0.5)
    assert L(2.0) == 2.0
    assert L(1e6) == 0.0


def test_kltable_extension_rules():
    rows = (LTable((0.0, 1.0), (1.0, 0.5)), LTable((0.0, 1.0), (3.0, 0.2)))
    b = KLTable((0.5, 2.0), rows, linear(1.0))
    # below the first radius: capped by 2 * sigma(r)
    assert b(0.1, 0.0) == pytest.approx(0.2)
    # between radii: envelope over rows up to the bracketing radius
    assert b(1.0, 1.0) == pytest.approx(0.5)
    # above the last radius: scaled by sigma(r) / sigma(r_max)
    assert b(4.0, 0.0) == pytest.approx(6.0)
    assert b(0.0, 5.0) == 0.0
