"""Wiener increments, discrete Ito integrals and the exponential kernels F, Phi.

Path ``p`` of an ensemble is drawn from its own Philox stream keyed by
``(seed, p)``, so any subset of paths can be regenerated independently and
results never depend on how work is split across threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import BadInterval, GridMisaligned, ShapeMismatch, SupportViolation

# Paths are processed in fixed-size blocks; partial reductions are combined in
# ascending block order, so this (and not the worker count) fixes rounding.
PATH_BLOCK = 512
_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: int

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 2:
            raise ShapeMismatch(f"need at least 2 time steps, got {self.M}")
        if not self.T > 0:
            raise ShapeMismatch(f"horizon must be positive, got {self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def knots(self) -> np.ndarray:
        return self.dt * np.arange(self.M + 1)

    def index_of(self, t: float) -> int:
        """Knot index of ``t``; raises :class:`GridMisaligned` if ``t`` is not a knot."""
        x = t / self.dt
        j = int(round(x))
        if abs(x - j) > _ALIGN_TOL * max(1.0, abs(x)) or not 0 <= j <= self.M:
            raise GridMisaligned(f"time {t} is not a knot of a grid with dt={self.dt}")
        return j

    def sub(self, j0: int, j1: int) -> "TimeGrid":
        return TimeGrid((j1 - j0) * self.dt, j1 - j0)


def path_blocks(P: int, block: int = PATH_BLOCK):
    return [(s, min(s + block, P)) for s in range(0, P, block)]


def parallel_blocks(fn, P: int, workers: int = 1, block: int = PATH_BLOCK):
    """Evaluate ``fn(start, stop)`` over fixed path blocks; results in block order."""
    blocks = path_blocks(P, block)
    if workers <= 1 or len(blocks) == 1:
        return [fn(a, b) for a, b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), blocks))


def path_generator(seed: int, p: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(p),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class WienerEnsemble:
    """``P`` paths of ``N`` independent components, ``M`` increments each."""

    grid: TimeGrid
    dw: np.ndarray  # (P, N, M)
    seed: int

    @property
    def P(self) -> int:
        return self.dw.shape[0]

    @property
    def N(self) -> int:
        return self.dw.shape[1]

    def paths(self) -> np.ndarray:
        """``w(t_j)`` with ``w(0) = 0``; shape ``(P, N, M+1)``."""
        w = np.zeros(self.dw.shape[:2] + (self.grid.M + 1,))
        np.cumsum(self.dw, axis=2, out=w[:, :, 1:])
        return w

    def coarsen(self, factor: int) -> "WienerEnsemble":
        """Same Brownian paths seen on a grid ``factor`` times coarser."""
        if self.grid.M % factor:
            raise GridMisaligned(f"M={self.grid.M} is not divisible by {factor}")
        M = self.grid.M // factor
        dw = self.dw.reshape(self.P, self.N, M, factor).sum(axis=3)
        return WienerEnsemble(TimeGrid(self.grid.T, M), dw, self.seed)

    def window(self, j0: int, j1: int) -> "WienerEnsemble":
        return WienerEnsemble(self.grid.sub(j0, j1), self.dw[:, :, j0:j1], self.seed)

    def component(self, d: int) -> np.ndarray:
        return self.dw[:, d, :]


def sample_wiener(seed: int, P: int, N: int, grid: TimeGrid, workers: int = 1) -> WienerEnsemble:
    if P < 1 or N < 1:
        raise ShapeMismatch("need at least one path and one Wiener component")
    dw = np.empty((P, N, grid.M))
    scale = np.sqrt(grid.dt)

    def fill(a, b):
        for p in range(a, b):
            dw[p] = path_generator(seed, p).standard_normal((N, grid.M)) * scale

    parallel_blocks(fill, P, workers)
    return WienerEnsemble(grid, dw, int(seed))


@dataclass(frozen=True, eq=False)
class DetIntegrand:
    """Deterministic piecewise-constant function of time, zero off ``[b_0, b_m)``."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.atleast_1d(np.asarray(self.breakpoints, dtype=float))
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        if bp.size < 1 or vals.size != bp.size - 1 or np.any(np.diff(bp) < 0):
            raise ShapeMismatch("integrand needs sorted breakpoints and one value per piece")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value: float, start: float, end: float) -> "DetIntegrand":
        return cls([start, end], [value])

    @classmethod
    def zero(cls) -> "DetIntegrand":
        return cls([0.0], [])

    @classmethod
    def from_json(cls, data) -> "DetIntegrand":
        return cls(data["breakpoints"], data["values"])

    def on_grid(self, grid: TimeGrid) -> np.ndarray:
        """Step values ``g_j`` on ``[t_j, t_{j+1})``; shape ``(M,)``."""
        g = np.zeros(grid.M)
        bp, vals = self.breakpoints, self.values
        for t0, t1, v in zip(bp[:-1], bp[1:], vals):
            if t1 <= t0 or v == 0.0:
                continue
            if t0 < -_ALIGN_TOL or t1 > grid.T * (1 + _ALIGN_TOL):
                raise SupportViolation(f"integrand piece [{t0}, {t1}] leaves [0, {grid.T}]")
            g[grid.index_of(max(t0, 0.0)):grid.index_of(min(t1, grid.T))] = v
        return g


def _as_steps(g, grid: TimeGrid) -> np.ndarray:
    if isinstance(g, DetIntegrand):
        return g.on_grid(grid)
    g = np.asarray(g, dtype=float)
    if g.shape[-1] != grid.M:
        raise ShapeMismatch(f"integrand has {g.shape[-1]} steps, grid has {grid.M}")
    return g


def ito_integral(g, dw: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Left-point sums ``sum_j g_j dw_j`` over the last axis of ``dw``."""
    steps = _as_steps(g, grid)
    if dw.shape[-1] != grid.M:
        raise ShapeMismatch("increments do not match the grid")
    return np.sum(steps * dw, axis=-1)


def log_F_cumulative(beta: np.ndarray, dw: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """``log F(t_j, 0)`` for all knots.

    ``beta`` has shape ``(N, M)`` (step values per component) and ``dw``
    shape ``(P, N, M)``.  Returns ``(P, M+1)``.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != dw.shape[1:]:
        raise ShapeMismatch(f"beta shape {beta.shape} does not match increments {dw.shape[1:]}")
    incr = np.sum(beta * dw - 0.5 * beta**2 * grid.dt, axis=1)
    out = np.zeros((dw.shape[0], grid.M + 1))
    np.cumsum(incr, axis=1, out=out[:, 1:])
    return out


def kernel_F(beta, dw, grid: TimeGrid, s: float, t: float) -> np.ndarray:
    """Exponential martingale ``F(t, s)`` per path."""
    if s > t:
        raise BadInterval(f"need s <= t, got s={s}, t={t}")
    js, jt = grid.index_of(s), grid.index_of(t)
    logF = log_F_cumulative(beta, dw, grid)
    return np.exp(logF[:, jt] - logF[:, js])


def kernel_Phi(lam: float, beta, dw, grid: TimeGrid, s: float, t: float) -> np.ndarray:
    return np.exp(-lam * (t - s)) * kernel_F(beta, dw, grid, s, t)
