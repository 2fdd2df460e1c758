import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from nonlocal_spde.errors import BadGrid, NonPositiveDiffusion, NonPositiveSpectrum, ShapeMismatch
from nonlocal_spde.spectral import (
    Grid1D,
    assemble_operator,
    coefficient,
    eigendecompose,
    lift,
    project,
    write_basis_csv,
)


def discrete_laplace_eigs(n_x, L, K):
    h = L / (n_x + 1)
    k = np.arange(1, K + 1)
    return 4.0 / h**2 * np.sin(k * np.pi * h / (2 * L)) ** 2


def test_grid_geometry():
    g = Grid1D(2.0, 3)
    assert g.h == 0.5
    assert_allclose(g.nodes, [0.5, 1.0, 1.5])
    assert_allclose(g.midpoints, [0.25, 0.75, 1.25, 1.75])


@pytest.mark.parametrize("n_x", [0, 2, 2.5])
def test_grid_rejects_too_few_nodes(n_x):
    with pytest.raises(BadGrid):
        Grid1D(1.0, n_x)


def test_laplacian_matches_closed_form():
    grid = Grid1D(np.pi, 511)
    basis = eigendecompose(assemble_operator(grid), 5)
    assert_allclose(basis.eigenvalues, discrete_laplace_eigs(511, np.pi, 5), rtol=1e-11)
    # frozen from the sine formula above
    assert_allclose(basis.eigenvalues[:3], [0.99999686, 3.9999498, 8.99974587], rtol=1e-8)


def test_basis_is_orthonormal_and_exact(laplace):
    _, op, basis = laplace
    assert basis.gram_deviation() < 1e-12
    assert np.all(basis.eigen_residuals(op) <= 1e-10 * np.maximum(basis.eigenvalues, 1.0))


def test_eigenvectors_are_sampled_sines(laplace):
    grid, _, basis = laplace
    for k in range(basis.K):
        s = np.sin((k + 1) * grid.nodes)
        s /= grid.norm(s)
        assert_allclose(basis.vectors[:, k], s, atol=1e-10)


def test_variable_coefficient_against_dense_solver():
    grid = Grid1D(1.0, 40)
    op = assemble_operator(grid, a=lambda x: 1 + x**2, a0=lambda x: np.cos(x))
    basis = eigendecompose(op, 6)
    ref = np.sort(np.linalg.eigvalsh(-op.matrix()))[:6]
    assert_allclose(basis.eigenvalues, ref, rtol=1e-11)
    assert basis.gram_deviation() < 1e-12


def test_sign_convention_first_entry_positive(laplace):
    _, _, basis = laplace
    assert np.all(basis.vectors[0] > 0)


def test_projection_of_sine_combination(laplace):
    grid, _, basis = laplace
    xs = np.sin(grid.nodes) + 0.3 * np.sin(3 * grid.nodes)
    c = project(xs, basis)
    r = np.sqrt(np.pi / 2)
    expect = np.zeros(8)
    expect[[0, 2]] = [r, 0.3 * r]
    assert_allclose(c, expect, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=8, max_size=8))
def test_project_inverts_lift(laplace, coeffs):
    _, _, basis = laplace
    assert_allclose(project(lift(coeffs, basis), basis), coeffs, atol=1e-11)


def test_shift_moves_eigenvalues_only():
    grid = Grid1D(np.pi, 63)
    b0 = eigendecompose(assemble_operator(grid), 4)
    b2 = eigendecompose(assemble_operator(grid, r=2.0), 4)
    assert_allclose(b2.eigenvalues, b0.eigenvalues + 2.0, rtol=1e-12)
    assert_allclose(b2.rates, b0.rates, rtol=1e-12)
    assert_allclose(b2.vectors, b0.vectors, atol=1e-10)


def test_nonpositive_spectrum_requires_shift():
    grid = Grid1D(np.pi, 63)
    with pytest.raises(NonPositiveSpectrum):
        eigendecompose(assemble_operator(grid, a0=2.0), 3)
    b = eigendecompose(assemble_operator(grid, a0=2.0, r="auto"), 3)
    assert b.eigenvalues[0] == pytest.approx(1e-6, rel=1e-6)
    assert b.rates[0] < 0


def test_auto_shift_is_zero_for_positive_spectrum():
    op = assemble_operator(Grid1D(np.pi, 31), r="auto")
    assert op.shift == 0.0


@pytest.mark.parametrize("a", [-1.0, 0.0, {"x": [0.0, 3.2], "value": [1.0, -1.0]}])
def test_rejects_nonpositive_diffusion(a):
    with pytest.raises(NonPositiveDiffusion):
        assemble_operator(Grid1D(np.pi, 31), a=a)


def test_delta_a_lower_bound():
    with pytest.raises(NonPositiveDiffusion):
        assemble_operator(Grid1D(1.0, 7), a=0.5, delta_a=0.5)


def test_coefficient_forms():
    x = np.array([0.0, 0.5, 1.0])
    assert_allclose(coefficient(2.0)(x), 2.0)
    assert_allclose(coefficient({"x": [0, 1], "value": [0, 2]})(x), [0, 1, 2])
    assert_allclose(coefficient(([0, 1], [1, 3]))(x), [1, 2, 3])
    assert_allclose(coefficient(lambda s: 1.0)(x), 1.0)


def test_shape_errors(laplace):
    grid, _, basis = laplace
    with pytest.raises(ShapeMismatch):
        project(np.zeros(grid.n_x + 1), basis)
    with pytest.raises(ShapeMismatch):
        lift(np.zeros(3), basis)
    with pytest.raises(ShapeMismatch):
        eigendecompose(assemble_operator(grid), 0)


def test_basis_csv(tmp_path, laplace):
    _, _, basis = laplace
    eig, vec = write_basis_csv(basis, tmp_path)
    rows = list(csv.reader(open(eig)))
    assert rows[0] == ["k", "lambda", "rate"]
    assert float(rows[1][1]) == basis.eigenvalues[0]
    head = next(csv.reader(open(vec)))
    assert head == ["node", "x"] + [f"v_{k}" for k in range(1, 9)]
