import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from nonlocal_spde.errors import BadTime, DegenerateMultiplier, IllPosedWeight, ShapeMismatch
from nonlocal_spde.weight import (
    NonlocalWeight,
    backward_denominator,
    forward_multiplier,
    q_factor,
    q_lower_bound,
    validate,
)


def midpoint(f, a, b, n=1_000_000):
    t = a + (b - a) * (np.arange(n) + 0.5) / n
    return (b - a) * np.mean(f(t))


def rho_fn(w):
    def f(t):
        out = np.zeros_like(t)
        for t0, t1, v in w.pieces():
            out[(t >= t0) & (t < t1)] = v
        return out
    return f


def test_q_closed_form():
    w = NonlocalWeight.constant(1.0, direction="backward")
    assert q_factor(w, np.array([1.0]), 0.0)[0] == pytest.approx(1 - np.exp(-1), rel=1e-14)
    assert q_factor(w, np.array([1.0]), 0.0)[0] == pytest.approx(0.63212056, rel=1e-8)
    assert q_factor(w, np.array([25.0]), 0.0)[0] == pytest.approx(0.04, rel=1e-10)
    assert q_factor(w, np.array([3.0]), 1.0)[0] == 0.0


def test_q_against_quadrature():
    w = NonlocalWeight(0.0, [0.0, 0.3, 0.5, 1.0], [2.0, 0.0, 1.5], "backward")
    lam = 4.0
    for s in (0.0, 0.2, 0.6):
        ref = midpoint(lambda t: rho_fn(w)(t) * np.exp(-lam * (1.0 - t)), s, 1.0)
        assert q_factor(w, np.array([lam]), s)[0] == pytest.approx(ref, rel=1e-9)


def test_forward_multiplier_against_quadrature():
    w = NonlocalWeight(0.7, [0.0, 0.25, 0.6, 2.0], [1.0, 3.0, 0.5])
    lam = np.array([0.5, 2.0, 9.0])
    got = forward_multiplier(w, lam)
    for g, l in zip(got, lam):
        ref = 0.7 * np.exp(-2 * l) + midpoint(lambda t: rho_fn(w)(t) * np.exp(-l * t), 0.0, 2.0)
        assert g == pytest.approx(ref, rel=1e-9)


def test_multiplier_special_cases():
    assert forward_multiplier(NonlocalWeight(1.0, [0.0], []), np.array([5.0]))[0] == 1.0
    m = forward_multiplier(NonlocalWeight(1.0, [0.0, 1.0], [0.0]), np.array([25.0]))[0]
    assert m == pytest.approx(np.exp(-25.0), rel=1e-14)
    assert m == pytest.approx(1.3888e-11, rel=1e-4)
    with pytest.raises(DegenerateMultiplier):
        forward_multiplier(NonlocalWeight(1.0, [0.0, 1.0], [0.0]), np.array([1e4]))


def test_backward_denominator():
    w = NonlocalWeight(2.0, [0.0, 1.0], [1.0], "backward")
    assert backward_denominator(w, np.array([1.0]))[0] == pytest.approx(1 - np.exp(-1) + 2 * np.exp(-1))


def test_validate_forward_and_backward_windows():
    fw = validate(NonlocalWeight.indicator(1.0, 0.0, 0.4))
    assert fw.valid and fw.T1 == pytest.approx(0.4) and fw.rho_floor == 1.0
    bw = validate(NonlocalWeight.indicator(1.0, 0.5, 1.0, direction="backward"))
    assert bw.valid and bw.T1 == pytest.approx(0.5) and bw.witness == (0.5, 1.0)
    # a weight supported late is fine backward but has no forward window
    late = validate(NonlocalWeight.indicator(1.0, 0.5, 1.0))
    assert not late.window_ok and not late.valid


def test_validate_rejections():
    neg = validate(NonlocalWeight(0.0, [0.0, 1.0], [-1.0]))
    assert not neg.nonnegative
    with pytest.raises(IllPosedWeight):
        neg.require(allow_ill_posed=True)
    cauchy = validate(NonlocalWeight(1.0, [0.0, 1.0], [0.0]))
    assert cauchy.ill_posed and "ill-posed" in cauchy.messages[0]
    with pytest.raises(IllPosedWeight):
        cauchy.require()
    cauchy.require(allow_ill_posed=True)
    assert validate(NonlocalWeight(-1.0, [0.0, 1.0], [1.0])).nonnegative is False


def test_weight_shape_checks():
    with pytest.raises(ShapeMismatch):
        NonlocalWeight(0.0, [0.1, 1.0], [1.0])
    with pytest.raises(ShapeMismatch):
        NonlocalWeight(0.0, [0.0, 1.0], [1.0, 2.0])
    with pytest.raises(ShapeMismatch):
        NonlocalWeight(0.0, [0.0, 1.0], [1.0], direction="sideways")
    with pytest.raises(BadTime):
        q_factor(NonlocalWeight.constant(1.0), np.array([1.0]), 1.5)


def test_json_round_trip():
    w = NonlocalWeight(0.5, [0.0, 0.5, 1.0], [1.0, 2.0], "backward")
    w2 = NonlocalWeight.from_json(w.to_json())
    assert_allclose(w2.breakpoints, w.breakpoints)
    assert_allclose(w2.values, w.values)
    assert w2.direction == "backward" and w2.kappa == 0.5
    assert NonlocalWeight.from_json({"T": 2.0, "rho": 1.5}).T == 2.0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 60.0), st.floats(0.0, 0.99), st.floats(0.0, 0.9))
def test_q_lower_bound_holds(lam, s, t1):
    w = NonlocalWeight(0.0, [0.0, t1, 1.0], [0.3, 1.0], "backward")
    rep = validate(w)
    assert q_lower_bound(w, np.array([lam]), s, rep)[0] <= q_factor(w, np.array([lam]), s)[0] * (1 + 1e-12)
