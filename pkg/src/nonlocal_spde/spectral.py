"""Discrete elliptic operator on an interval and its Dirichlet eigenbasis.

The operator is ``A v = (a v')' + a0 v`` with ``v(0) = v(L) = 0``, discretised
by the conservative three-point stencil with the diffusion coefficient
sampled at flux midpoints.  The eigenpairs ``A v_k = -lambda_k v_k`` give the
coordinate system used by every solver in the package.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy import linalg

from .errors import (
    BadGrid,
    EigensolveFailure,
    NonPositiveDiffusion,
    NonPositiveSpectrum,
    ShapeMismatch,
)

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray], dict, tuple]

AUTO_SHIFT_FLOOR = 1e-6


def coefficient(spec: Coefficient) -> Callable[[np.ndarray], np.ndarray]:
    """Turn a scalar, callable or piecewise-linear table into a callable.

    Tables are ``{"x": [...], "value": [...]}`` or an ``(x, value)`` pair and
    are interpolated linearly (constant extrapolation outside the table).
    """
    if callable(spec):
        return lambda x: np.broadcast_to(np.asarray(spec(x), dtype=float), np.shape(x)).copy()
    if isinstance(spec, dict):
        xs, vals = spec["x"], spec["value"]
    elif isinstance(spec, (tuple, list)) and len(spec) == 2 and np.ndim(spec[0]) == 1:
        xs, vals = spec
    else:
        c = float(spec)
        return lambda x: np.full(np.shape(x), c, dtype=float)
    xs = np.asarray(xs, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if xs.shape != vals.shape or xs.ndim != 1 or xs.size == 0:
        raise ShapeMismatch("coefficient table needs equal-length 'x' and 'value' lists")
    if np.any(np.diff(xs) < 0):
        raise ShapeMismatch("coefficient table abscissae must be sorted")
    return lambda x: np.interp(x, xs, vals)


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of ``n_x`` interior nodes on ``(0, L)``."""

    L: float
    n_x: int

    def __post_init__(self):
        if not (self.L > 0 and np.isfinite(self.L)):
            raise BadGrid(f"interval length must be positive, got {self.L}")
        if int(self.n_x) != self.n_x or self.n_x < 3:
            raise BadGrid(f"need at least 3 interior nodes, got {self.n_x}")

    @property
    def h(self) -> float:
        return self.L / (self.n_x + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.h * np.arange(1, self.n_x + 1)

    @property
    def midpoints(self) -> np.ndarray:
        """Flux points ``x_{i+1/2}``, ``i = 0..n_x`` (includes both half-cells at the ends)."""
        return self.h * (np.arange(self.n_x + 1) + 0.5)

    def inner(self, u, v) -> float:
        return float(self.h * np.dot(u, v))

    def norm(self, u) -> float:
        return float(np.sqrt(self.h * np.dot(u, u)))


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    grid: Grid1D
    a_mid: np.ndarray
    a_nodes: np.ndarray
    a0: np.ndarray
    shift: float = 0.0

    @property
    def diagonal(self) -> np.ndarray:
        h2 = self.grid.h**2
        return -(self.a_mid[:-1] + self.a_mid[1:]) / h2 + self.a0 - self.shift

    @property
    def offdiagonal(self) -> np.ndarray:
        return self.a_mid[1:-1] / self.grid.h**2

    def matrix(self) -> np.ndarray:
        """Dense copy of the symmetric tridiagonal matrix (for small grids and tests)."""
        off = self.offdiagonal
        return np.diag(self.diagonal) + np.diag(off, 1) + np.diag(off, -1)

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.grid.n_x:
            raise ShapeMismatch(f"expected {self.grid.n_x} nodal values, got {u.shape[0]}")
        off = self.offdiagonal
        out = self.diagonal.reshape((-1,) + (1,) * (u.ndim - 1)) * u
        off = off.reshape((-1,) + (1,) * (u.ndim - 1))
        out[:-1] += off * u[1:]
        out[1:] += off * u[:-1]
        return out


def _lowest_eigenvalue(diag, off) -> float:
    w = linalg.eigh_tridiagonal(-diag, -off, eigvals_only=True, select="i", select_range=(0, 0))
    return float(w[0])


def assemble_operator(
    grid: Grid1D,
    a: Coefficient = 1.0,
    a0: Coefficient = 0.0,
    r: float | str = 0.0,
    delta_a: float = 0.0,
) -> EllipticOperator:
    """Assemble ``(a u')' + a0 u - r u`` on the interior nodes.

    ``r="auto"`` picks the smallest non-negative shift with ``lambda_1 >= 1e-6``.
    ``delta_a`` is the configured lower bound for the diffusion samples; any
    midpoint sample ``<= delta_a`` (and in particular ``<= 0``) is rejected.
    """
    a_fun, a0_fun = coefficient(a), coefficient(a0)
    a_mid = np.asarray(a_fun(grid.midpoints), dtype=float)
    a_nodes = np.asarray(a_fun(grid.nodes), dtype=float)
    a0_nodes = np.asarray(a0_fun(grid.nodes), dtype=float)
    if not np.all(np.isfinite(a_mid)) or not np.all(np.isfinite(a0_nodes)):
        raise NonPositiveDiffusion("coefficients must be finite")
    bad = a_mid <= max(delta_a, 0.0)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NonPositiveDiffusion(
            f"diffusion sample a({grid.midpoints[i]:.6g}) = {a_mid[i]:.6g} is not above {max(delta_a, 0.0)}"
        )
    op = EllipticOperator(grid, a_mid, a_nodes, a0_nodes, 0.0)
    if r == "auto":
        lam1 = _lowest_eigenvalue(op.diagonal, op.offdiagonal)
        shift = max(0.0, AUTO_SHIFT_FLOOR - lam1)
    else:
        shift = float(r)
        if shift < 0:
            raise ValueError("spectral shift must be non-negative")
    return EllipticOperator(grid, a_mid, a_nodes, a0_nodes, shift)


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Leading ``K`` eigenpairs of ``-A_h``, orthonormal in ``<u, v>_h``.

    ``eigenvalues`` include the operator shift; ``rates`` are the decay rates
    of the unshifted operator, which is what the time integrators use.
    """

    grid: Grid1D
    eigenvalues: np.ndarray
    vectors: np.ndarray  # (n_x, K)
    shift: float = 0.0

    @property
    def K(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def rates(self) -> np.ndarray:
        return self.eigenvalues - self.shift

    def gram(self) -> np.ndarray:
        return self.h * self.vectors.T @ self.vectors

    def gram_deviation(self) -> float:
        return float(np.max(np.abs(self.gram() - np.eye(self.K))))

    def eigen_residuals(self, op: EllipticOperator) -> np.ndarray:
        """``||A_h v_k + lambda_k v_k||_h`` per mode."""
        res = op.apply(self.vectors) + self.vectors * self.eigenvalues
        return np.sqrt(self.h * np.sum(res**2, axis=0))

    def truncate(self, K: int) -> "SpectralBasis":
        return SpectralBasis(self.grid, self.eigenvalues[:K].copy(), self.vectors[:, :K].copy(), self.shift)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for k in range(out.shape[1]):
        col = out[:, k]
        big = np.abs(col) > 1e-8 * np.max(np.abs(col))
        if col[np.argmax(big)] < 0:
            out[:, k] = -col
    return out


def eigendecompose(op: EllipticOperator, K: int) -> SpectralBasis:
    """Lowest ``K`` eigenpairs of ``-A_h`` in ascending order.

    Each eigenvector is scaled to unit discrete norm and oriented so that its
    first non-negligible entry is positive, which makes the output a pure
    function of the operator.

    Raises
    ------
    NonPositiveSpectrum
        If ``lambda_1 <= 0`` and the operator carries no shift.
    EigensolveFailure
        If LAPACK fails or returns non-finite values.
    """
    n = op.grid.n_x
    if int(K) != K or not 1 <= K <= n:
        raise ShapeMismatch(f"mode count must lie in [1, {n}], got {K}")
    try:
        lam, vec = linalg.eigh_tridiagonal(
            -op.diagonal, -op.offdiagonal, select="i", select_range=(0, K - 1), lapack_driver="stemr"
        )
    except (linalg.LinAlgError, ValueError) as exc:
        raise EigensolveFailure(str(exc)) from exc
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(vec))):
        raise EigensolveFailure("non-finite eigenpairs")
    order = np.argsort(lam, kind="stable")
    lam, vec = lam[order], vec[:, order]
    if lam[0] <= 0 and op.shift == 0.0:
        raise NonPositiveSpectrum(
            f"lowest eigenvalue {lam[0]:.6g} is not positive; supply a spectral shift (r > 0 or 'auto')"
        )
    vec = _fix_signs(vec / np.sqrt(op.grid.h))
    return SpectralBasis(op.grid, lam, vec, op.shift)


def project(field, basis: SpectralBasis) -> np.ndarray:
    """Mode coefficients ``<field, v_k>_h``.  Extra leading axes are kept."""
    field = np.asarray(field, dtype=float)
    if field.shape[-1] != basis.grid.n_x:
        raise ShapeMismatch(f"field has {field.shape[-1]} nodes, basis grid has {basis.grid.n_x}")
    return basis.h * field @ basis.vectors


def lift(coeffs, basis: SpectralBasis) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != basis.K:
        raise ShapeMismatch(f"got {coeffs.shape[-1]} coefficients for a {basis.K}-mode basis")
    return coeffs @ basis.vectors.T


def write_basis_csv(basis: SpectralBasis, out_dir: Path) -> list[Path]:
    """Write ``eigenvalues.csv`` (k, lambda, rate) and ``eigenvectors.csv`` (node, x, v_1..v_K)."""
    out_dir = Path(out_dir)
    eig_path, vec_path = out_dir / "eigenvalues.csv", out_dir / "eigenvectors.csv"
    with open(eig_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "lambda", "rate"])
        for k, (lam, rate) in enumerate(zip(basis.eigenvalues, basis.rates), start=1):
            w.writerow([k, repr(float(lam)), repr(float(rate))])
    with open(vec_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "x"] + [f"v_{k}" for k in range(1, basis.K + 1)])
        for i, x in enumerate(basis.grid.nodes, start=1):
            w.writerow([i, repr(float(x))] + [repr(float(v)) for v in basis.vectors[i - 1]])
    return [eig_path, vec_path]
