from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.integrate import quad, solve_ivp

from nonlocal_spde.errors import ShapeMismatch
from nonlocal_spde.expint import ModeSource, phi, propagate_segment


def phi_quad(k, z):
    if k == 0:
        return np.exp(z)
    val, _ = quad(lambda s: np.exp((1 - s) * z) * s ** (k - 1) / factorial(k - 1), 0, 1, epsabs=0, epsrel=1e-13)
    return val


@pytest.mark.parametrize("k", [0, 1, 2, 3])
@pytest.mark.parametrize("z", [-30.0, -2.5, -1.0, -0.999, -0.3, -1e-9, 0.0, 0.4, 2.0])
def test_phi_matches_integral_form(k, z):
    assert phi(k, np.array([z]))[0] == pytest.approx(phi_quad(k, z), rel=1e-12, abs=1e-300)


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 5), st.integers(1, 3))
def test_phi_recurrence(z, k):
    # z phi_{k}(z) = phi_{k-1}(z) - 1/(k-1)!
    lhs = z * phi(k, np.array([z]))[0]
    rhs = phi(k - 1, np.array([z]))[0] - 1.0 / factorial(k - 1)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)


def test_phi_at_zero():
    assert_allclose(phi(3, np.zeros(2)), 1 / 6)


def test_propagate_segment_against_ode_solver():
    rates = np.array([0.5, 3.0, 40.0])
    tau, y0 = 0.7, np.array([1.0, -2.0, 0.5])
    f0, f1 = np.array([1.0, 0.0, 2.0]), np.array([-1.0, 3.0, 2.0])

    def rhs(t, u):
        f = f0 + (f1 - f0) * t / tau
        y = u[:3]
        return np.concatenate([-rates * y + f, 1.7 * y])

    ref = solve_ivp(rhs, (0, tau), np.concatenate([y0, np.zeros(3)]), rtol=1e-12, atol=1e-14, method="DOP853").y[:, -1]
    y1, integral = propagate_segment(rates, tau, y0, f0, f1, rho=1.7)
    assert_allclose(y1, ref[:3], rtol=1e-9)
    assert_allclose(integral, ref[3:], rtol=1e-9)


def test_propagate_segment_without_weight():
    y1, integral = propagate_segment(np.array([1.0]), 1.0, np.array([1.0]), np.zeros(1), np.zeros(1))
    assert y1[0] == pytest.approx(np.exp(-1))
    assert integral[0] == 0.0


def test_source_evaluation_and_jumps():
    src = ModeSource([0.0, 0.5, 0.5, 1.0], [[0.0], [1.0], [3.0], [1.0]])
    assert src(0.25)[0] == pytest.approx(0.5)
    assert src(0.5)[0] == pytest.approx(3.0)  # right-continuous
    assert src(1.5)[0] == 0.0
    assert_allclose(src.jump_times(), [0.5])
    pieces = list(src.segments(0.25, 0.75))
    assert [(p[0], p[1]) for p in pieces] == [(0.25, 0.5), (0.5, 0.75)]
    assert_allclose([pieces[0][2][0], pieces[0][3][0], pieces[1][2][0], pieces[1][3][0]], [0.5, 1.0, 3.0, 2.0])


def test_source_reversed_and_restricted():
    src = ModeSource([0.0, 1.0], [[0.0], [2.0]])
    rev = src.reversed(1.0)
    assert rev(0.25)[0] == pytest.approx(src(0.75)[0])
    part = src.restricted(0.0, 0.5)
    assert part(0.5)[0] == pytest.approx(1.0)
    assert part(0.75)[0] == 0.0
    assert src.shifted(1.0)(1.5)[0] == pytest.approx(1.0)


def test_source_validation():
    with pytest.raises(ShapeMismatch):
        ModeSource([0.0], [[1.0]])
    with pytest.raises(ShapeMismatch):
        ModeSource([1.0, 0.0], [[1.0], [1.0]])
    with pytest.raises(ShapeMismatch):
        ModeSource([0.0, 0.5, 0.5, 0.5], [[1.0]] * 4)
