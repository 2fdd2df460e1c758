"""Backward problem: find ``(u, chi)`` from a time-averaged terminal-side condition.

The model is ``du + (A u + phi + sum_i beta_i(t) chi_i) dt = sum_i chi_i dw_i``
with the pathwise condition ``kappa u(0) + int rho u dt = psi``.  Both ``psi``
and the terminal value ``alpha = u(T)`` are handled in martingale
representation form, mean plus Ito integrals of deterministic integrands:

    alpha_k = A_k + sum_d int Yhat_kd dw_d.

For deterministic ``beta`` the conditional expectation defining the mode
process is available in closed form (a Girsanov shift of the integrands):

    Y_k(t) = A_k + sum_d int_0^t Yhat_kd dw_d + sum_d int_t^T Yhat_kd beta_d ds,
    y_k(t) = e^{-lambda_k (T - t)} Y_k(t),   Upsilon_kd(t) = e^{-lambda_k (T - t)} Yhat_kd(t).

Integrals over time are taken on the Ito grid: integrands are step functions
held at the left knot of every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadInterval,
    IllPosedWeight,
    ShapeMismatch,
    SupportViolation,
    ThetaViolation,
    UnsupportedNoise,
)
from .expint import ModeSource
from .forward import StepPlan
from .report import ResidualReport
from .spectral import EllipticOperator, SpectralBasis
from .stochastic import DetIntegrand, TimeGrid, WienerEnsemble, parallel_blocks
from .weight import NonlocalWeight, backward_denominator, q_lower_bound, q_on_grid, validate

_SUPPORT_TOL = 1e-12


def _reversed_weight(w: NonlocalWeight) -> NonlocalWeight:
    return NonlocalWeight(w.kappa, w.T - w.breakpoints[::-1], w.values[::-1], "forward")


@dataclass(frozen=True, eq=False)
class RandomFieldRep:
    """Random field in mode coordinates: ``gamma_k = mean_k + sum_d int g_kd dw_d``.

    ``integrands`` maps 0-based ``(k, d)`` to a :class:`DetIntegrand`.
    """

    means: np.ndarray
    integrands: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.means, dtype=float))
        object.__setattr__(self, "means", m)
        for (k, d) in self.integrands:
            if not (0 <= k < m.size and d >= 0):
                raise ShapeMismatch(f"integrand index {(k, d)} out of range for {m.size} modes")

    @property
    def K(self) -> int:
        return self.means.size

    @property
    def N(self) -> int:
        return 1 + max((d for _, d in self.integrands), default=-1)

    def support_end(self) -> float:
        end = 0.0
        for g in self.integrands.values():
            bp, vals = g.breakpoints, g.values
            for t0, t1, v in zip(bp[:-1], bp[1:], vals):
                if v != 0.0 and t1 > t0:
                    end = max(end, float(t1))
        return end

    def check_support(self, limit: float) -> None:
        end = self.support_end()
        if end > limit + _SUPPORT_TOL * max(1.0, limit):
            raise SupportViolation(f"representation integrands reach t={end}, beyond the margin limit {limit}")

    def steps(self, grid: TimeGrid, N: int) -> np.ndarray:
        """Integrand step values, shape ``(K, N, M)``."""
        out = np.zeros((self.K, N, grid.M))
        for (k, d), g in self.integrands.items():
            out[k, d] = g.on_grid(grid)
        return out

    def samples(self, wiener: WienerEnsemble) -> np.ndarray:
        """Pathwise values ``(P, K)``."""
        g = self.steps(wiener.grid, max(self.N, wiener.N))
        return self.means[None, :] + _ito_modes(g, wiener.dw)

    @classmethod
    def from_steps(cls, means, steps: np.ndarray, grid: TimeGrid) -> "RandomFieldRep":
        integrands = {}
        for k in range(steps.shape[0]):
            for d in range(steps.shape[1]):
                if np.any(steps[k, d]):
                    integrands[(k, d)] = DetIntegrand(grid.knots, steps[k, d])
        return cls(np.asarray(means, dtype=float), integrands)

    @classmethod
    def from_json(cls, data: dict, K: int) -> "RandomFieldRep":
        """``{"modes": [{"k": 1, "mean": .., "integrands": [{"d": 1, "breakpoints": [..], "values": [..]}]}]}``."""
        means = np.zeros(K)
        integrands = {}
        for entry in data.get("modes", []):
            k = int(entry["k"]) - 1
            if not 0 <= k < K:
                raise ShapeMismatch(f"mode index {k + 1} outside 1..{K}")
            means[k] = float(entry.get("mean", 0.0))
            for g in entry.get("integrands", []):
                integrands[(k, int(g["d"]) - 1)] = DetIntegrand.from_json(g)
        return cls(means, integrands)


def _ito_modes(steps: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """``sum_d sum_j steps[k, d, j] dw[p, d, j]`` as ``(P, K)``."""
    N = steps.shape[1]
    out = np.zeros((dw.shape[0], steps.shape[0]))
    for d in range(N):
        out += dw[:, d, :] @ steps[:, d, :].T if np.any(steps[:, d]) else 0.0
    return out


@dataclass(frozen=True, eq=False)
class BackwardProblem:
    """Data of the backward non-local problem.

    ``beta`` holds one deterministic time profile per Wiener component; the
    gradient part of the noise operator is absent in this problem.
    """

    operator: EllipticOperator
    basis: SpectralBasis
    weight: NonlocalWeight
    eps: float
    source: ModeSource | None = None
    beta: tuple = ()
    theta: float | None = None

    def __post_init__(self):
        w = self.weight
        if w.direction != "backward":
            raise ShapeMismatch("backward problem needs a weight with direction='backward'")
        if not 0 < self.eps < w.T:
            raise BadInterval(f"measurability margin must lie in (0, T), got {self.eps}")
        K = self.basis.K
        if self.source is None:
            object.__setattr__(self, "source", ModeSource.zero(w.T, K))
        elif self.source.K != K:
            raise ShapeMismatch(f"source has {self.source.K} modes, basis has {K}")
        for b in self.beta:
            if not isinstance(b, DetIntegrand):
                raise UnsupportedNoise("backward noise profiles must be deterministic piecewise-constant integrands")
        object.__setattr__(self, "beta", tuple(self.beta))
        theta = self.theta
        if theta is None:
            theta = 0.0 if w.kappa == 0 else _source_onset(self.source, w.T)
        if w.kappa == 0 and theta != 0.0:
            raise ThetaViolation("with kappa = 0 the source onset must be theta = 0")
        if w.kappa != 0 and not (0.0 < theta <= w.T):
            raise ThetaViolation(f"with kappa != 0 the source onset must satisfy 0 < theta <= T, got {theta}")
        if theta > 0 and _source_onset(self.source, w.T) < theta:
            raise ThetaViolation(f"source is nonzero before theta = {theta}")
        object.__setattr__(self, "theta", float(theta))

    @property
    def rates(self) -> np.ndarray:
        return self.basis.rates

    def beta_steps(self, grid: TimeGrid, N: int) -> np.ndarray:
        out = np.zeros((N, grid.M))
        for d, b in enumerate(self.beta):
            if d >= N:
                if np.any(b.values):
                    raise ShapeMismatch(f"noise profile {d + 1} has no Wiener component")
                continue
            out[d] = b.on_grid(grid)
        return out

    def n_components(self, *reps) -> int:
        return max([len(self.beta)] + [r.N for r in reps] + [1])


def _source_onset(source: ModeSource, T: float) -> float:
    """First time at which the mean source is nonzero (``T`` if never)."""
    for t0, t1, f0, f1 in source.segments(0.0, T):
        if np.any(f0) or np.any(f1):
            return t0
    return T


def mean_level(w: NonlocalWeight, lam, Egamma):
    """``E gamma / (q(0) + kappa e^{-lam T})`` (the terminal mean when ``beta = 0``)."""
    D = backward_denominator(w, lam)
    if np.any(D <= 0) or not np.all(np.isfinite(1.0 / D)):
        raise IllPosedWeight("backward denominator vanishes or underflows")
    return np.asarray(Egamma, dtype=float) / D


def integrand_transform(w: NonlocalWeight, lam: float, gamma_hat: DetIntegrand, eps: float,
                        grid: TimeGrid) -> DetIntegrand:
    """``Yhat(s) = gamma_hat(s) / q(s)`` with ``q`` taken at the left knot of each step."""
    g = gamma_hat.on_grid(grid)
    limit = w.T - eps
    late = grid.knots[:-1] >= limit - _SUPPORT_TOL
    if np.any(g[late] != 0.0):
        raise SupportViolation(f"integrand is nonzero past T - eps = {limit}")
    q = q_on_grid(w, np.array([lam]), grid.knots[:-1])[:, 0]
    out = np.zeros_like(g)
    nz = g != 0.0
    if np.any(q[nz] <= 0):
        raise IllPosedWeight("random part of the condition cannot be matched: q vanishes on the integrand support")
    out[nz] = g[nz] / q[nz]
    return DetIntegrand(grid.knots, out)


def integrand_bound(w: NonlocalWeight, lam: float, gamma_steps, Yhat_steps, grid: TimeGrid) -> dict:
    """Compare ``|Yhat|`` with ``|gamma_hat| / (floor (1 - e^{-lam (T - max(T1, s))}) / lam)``.

    Returns the largest ratio ``|Yhat| / bound`` over the support (at most one
    when the bound holds) and the number of steps where the bound is vacuous.
    """
    report = validate(w)
    s = grid.knots[:-1]
    lb = np.array([float(q_lower_bound(w, np.array([lam]), float(t), report)[0]) for t in s])
    g = np.abs(np.asarray(gamma_steps))
    Y = np.abs(np.asarray(Yhat_steps))
    nz = g > 0
    ok = nz & (lb > 0)
    ratio = float(np.max(Y[ok] * lb[ok] / g[ok])) if np.any(ok) else 0.0
    return {"max_ratio": ratio, "vacuous_steps": int(np.sum(nz & (lb <= 0)))}


@dataclass
class BackwardSolution:
    """Mode solution of a backward problem on a fixed Wiener ensemble.

    ``A`` and ``Yhat`` (``(K, N, M)``) represent the homogeneous terminal
    value; ``tail`` is ``sum_d int_{t_n}^T Yhat beta ds`` at every knot;
    ``y_phi`` the deterministic source response.  ``upsilon`` is the
    diffusion coefficient ``(N, M+1, K)``, identical on every path.
    """

    grid: TimeGrid
    wiener: WienerEnsemble
    rates: np.ndarray
    A: np.ndarray
    Yhat: np.ndarray
    beta: np.ndarray
    tail: np.ndarray  # (M+1, K)
    y_phi: np.ndarray  # (M+1, K)
    alpha: np.ndarray  # (P, K)
    upsilon: np.ndarray
    y: np.ndarray | None = None  # (P, M+1, K)
    report: ResidualReport = field(default_factory=ResidualReport)

    @property
    def P(self) -> int:
        return self.alpha.shape[0]

    @property
    def K(self) -> int:
        return self.A.size

    def decay(self) -> np.ndarray:
        """``e^{-lambda (T - t_n)}``, shape ``(M+1, K)``."""
        return np.exp(-np.outer(self.grid.T - self.grid.knots, self.rates))

    def Y_mode(self, k: int, paths: slice = slice(None)) -> np.ndarray:
        """``Y_k(t_n)`` for the chosen paths, ``(p, M+1)``."""
        return _Y_mode(self.A[k], self.Yhat[k], self.tail[:, k], self.wiener.dw[paths])

    def trajectories(self, paths: slice = slice(None)) -> np.ndarray:
        if self.y is not None:
            return self.y[paths]
        dec = self.decay()
        out = np.stack([self.Y_mode(k, paths) for k in range(self.K)], axis=-1)
        return dec[None] * out + self.y_phi[None]

    def initial(self) -> np.ndarray:
        """``u(0)`` mode coefficients; ``F_0`` is trivial so this is the same on every path."""
        dec0 = np.exp(-self.rates * self.grid.T)
        return dec0 * (self.A + self.tail[0]) + self.y_phi[0]


def _Y_mode(A: float, Yhat_k: np.ndarray, tail_k: np.ndarray, dw: np.ndarray) -> np.ndarray:
    incr = np.zeros((dw.shape[0], dw.shape[2]))
    for d in range(Yhat_k.shape[0]):
        if np.any(Yhat_k[d]):
            incr += Yhat_k[d][None, :] * dw[:, d, :]
    Y = np.empty((dw.shape[0], dw.shape[2] + 1))
    Y[:, 0] = 0.0
    np.cumsum(incr, axis=1, out=Y[:, 1:])
    Y += A + tail_k[None, :]
    return Y


def source_component(source: ModeSource, rates, grid: TimeGrid, weight: NonlocalWeight | None = None):
    """``y_phi(t) = int_t^T e^{-lambda (s - t)} phi(s) ds`` at the knots.

    Returns ``(y_phi (M+1, K), psi_phi (K,))`` where ``psi_phi`` is
    ``kappa y_phi(0) + int rho y_phi dt`` (zero without a weight), all exact.
    """
    rates = np.asarray(rates, dtype=float)
    K, M = rates.size, grid.M
    rev_w = None if weight is None else _reversed_weight(weight)
    plan = StepPlan.build(rates, source.reversed(grid.T), grid, rev_w)
    z = np.zeros((M + 1, K))
    integral = np.zeros(K)
    for j in range(M):
        integral += plan.hom_int[j] * z[j] + plan.forced_int[j]
        z[j + 1] = plan.decay[j] * z[j] + plan.forced[j]
    y_phi = z[::-1].copy()
    psi_phi = integral + (0.0 if weight is None else weight.kappa * y_phi[0])
    return y_phi, psi_phi


def reconstruct_terminal(A, Yhat: np.ndarray, wiener: WienerEnsemble) -> np.ndarray:
    """``alpha_k = A_k + sum_d int Yhat_kd dw_d`` per path, ``(P, K)``."""
    return np.asarray(A, dtype=float)[None, :] + _ito_modes(Yhat, wiener.dw)


def girsanov_tail(Yhat: np.ndarray, beta: np.ndarray, dt: float) -> np.ndarray:
    """``sum_d int_{t_n}^T Yhat_kd beta_d ds`` at every knot, ``(M+1, K)``."""
    K, N, M = Yhat.shape
    per_step = np.zeros((M, K))
    for d in range(N):
        per_step += (Yhat[:, d, :] * beta[d][None, :]).T * dt
    out = np.zeros((M + 1, K))
    out[:M] = np.cumsum(per_step[::-1], axis=0)[::-1]
    return out


def mode_process(A, Yhat: np.ndarray, rates, beta: np.ndarray, wiener: WienerEnsemble,
                 y_phi: np.ndarray | None = None, keep_paths: bool = True, workers: int = 1):
    """Trajectories ``y (P, M+1, K)`` (or ``None``) and the path-independent ``Upsilon (N, M+1, K)``."""
    grid = wiener.grid
    A = np.asarray(A, dtype=float)
    rates = np.asarray(rates, dtype=float)
    K, N, M = Yhat.shape
    if beta.shape != (N, M):
        raise ShapeMismatch(f"noise profile shape {beta.shape} does not match integrands {(N, M)}")
    tail = girsanov_tail(Yhat, beta, grid.dt)
    dec = np.exp(-np.outer(grid.T - grid.knots, rates))
    ups = np.zeros((N, M + 1, K))
    for d in range(N):
        ups[d, :M] = dec[:M] * Yhat[:, d, :].T
    if y_phi is None:
        y_phi = np.zeros((M + 1, K))
    if not keep_paths:
        return None, ups, tail
    y = np.empty((wiener.P, M + 1, K))

    def block(a, b):
        for k in range(K):
            y[a:b, :, k] = dec[None, :, k] * _Y_mode(A[k], Yhat[k], tail[:, k], wiener.dw[a:b]) + y_phi[None, :, k]

    parallel_blocks(block, wiener.P, workers)
    return y, ups, tail


KEEP_PATHS_LIMIT = 2_000_000


def _solve_from_rep(rates, A, Yhat, beta, y_phi, wiener: WienerEnsemble, keep_paths, workers) -> BackwardSolution:
    grid = wiener.grid
    if keep_paths is None:
        keep_paths = wiener.P * (grid.M + 1) * len(A) <= KEEP_PATHS_LIMIT
    y, ups, tail = mode_process(A, Yhat, rates, beta, wiener, y_phi, keep_paths, workers)
    if y is not None:
        alpha = y[:, -1].copy()
    else:
        # same summation as the trajectories, so y(T) = alpha holds exactly
        alpha = np.empty((wiener.P, len(A)))

        def block(a, b):
            for k in range(len(A)):
                alpha[a:b, k] = _Y_mode(A[k], Yhat[k], tail[:, k], wiener.dw[a:b])[:, -1] + y_phi[-1, k]

        parallel_blocks(block, wiener.P, workers)
    return BackwardSolution(grid, wiener, np.asarray(rates, dtype=float), np.asarray(A, dtype=float), Yhat, beta,
                            tail, y_phi, alpha, ups, y)


def _check_wiener(problem: BackwardProblem, wiener: WienerEnsemble, N: int) -> None:
    if abs(wiener.grid.T - problem.weight.T) > 1e-12 * max(1.0, problem.weight.T):
        raise ShapeMismatch(f"time grid horizon {wiener.grid.T} differs from weight horizon {problem.weight.T}")
    if wiener.N < N:
        raise ShapeMismatch(f"problem uses {N} Wiener components, ensemble has {wiener.N}")


def backward_cauchy(xi: RandomFieldRep, problem: BackwardProblem, wiener: WienerEnsemble,
                    keep_paths: bool | None = None, workers: int = 1) -> BackwardSolution:
    """Solve with the terminal value ``u(T) = xi`` given in representation form."""
    N = wiener.N
    _check_wiener(problem, wiener, problem.n_components(xi))
    grid = wiener.grid
    if xi.K != problem.basis.K:
        raise ShapeMismatch(f"terminal value has {xi.K} modes, basis has {problem.basis.K}")
    Yhat = xi.steps(grid, N)
    beta = problem.beta_steps(grid, N)
    y_phi, _ = source_component(problem.source, problem.rates, grid)
    # the source response vanishes at T, so xi is the homogeneous terminal value
    return _solve_from_rep(problem.rates, xi.means, Yhat, beta, y_phi, wiener, keep_paths, workers)


def condition_map(problem: BackwardProblem, A, Yhat: np.ndarray, grid: TimeGrid) -> RandomFieldRep:
    """Representation of ``kappa u(0) + int rho u dt`` for the homogeneous solution with terminal ``(A, Yhat)``.

    Uses the same left-knot rule for ``q`` as the solver, so that composing this
    map with :func:`solve_backward_nonlocal` is exact up to rounding.  The source
    contribution is added to the mean.
    """
    w, rates = problem.weight, problem.rates
    K, N, M = Yhat.shape
    beta = problem.beta_steps(grid, N)
    q = q_on_grid(w, rates, grid.knots)  # (M+1, K)
    D = backward_denominator(w, rates)
    gamma_hat = Yhat * q[:M].T[:, None, :]
    corr = np.zeros(K)
    for d in range(N):
        corr += np.sum(Yhat[:, d, :] * beta[d][None, :] * (D[:, None] - q[:M].T), axis=1) * grid.dt
    _, psi_phi = source_component(problem.source, rates, grid, w)
    means = D * np.asarray(A, dtype=float) + corr + psi_phi
    return RandomFieldRep.from_steps(means, gamma_hat, grid)


def solve_backward_nonlocal(psi: RandomFieldRep, problem: BackwardProblem, wiener: WienerEnsemble,
                            allow_ill_posed: bool = False, keep_paths: bool | None = None,
                            workers: int = 1) -> BackwardSolution:
    """Solve the backward non-local problem for ``psi`` on the given Wiener ensemble.

    The returned report holds the per-path condition residual (relative to
    ``||psi(omega)||``), the margin check on ``Upsilon``, the integrand bound
    and the ``lambda^2 e^{-lambda T} E alpha^2`` summability series.
    """
    w, basis = problem.weight, problem.basis
    report = validate(w)
    report.require(allow_ill_posed)
    if report.T1 is not None and not report.T1 < w.T - problem.eps:
        raise SupportViolation(f"positivity window starts at T1={report.T1}, not before T - eps = {w.T - problem.eps}")
    if psi.K != basis.K:
        raise ShapeMismatch(f"psi has {psi.K} modes, basis has {basis.K}")
    psi.check_support(w.T - problem.eps)
    N = wiener.N
    _check_wiener(problem, wiener, problem.n_components(psi))
    grid, rates = wiener.grid, problem.rates
    M, K = grid.M, basis.K

    gamma_hat = psi.steps(grid, N)
    beta = problem.beta_steps(grid, N)
    y_phi, psi_phi = source_component(problem.source, rates, grid, w)
    q = q_on_grid(w, rates, grid.knots)  # (M+1, K)
    D = backward_denominator(w, rates)
    if np.any(D <= 0) or not np.all(np.isfinite(1.0 / D)):
        raise IllPosedWeight("backward denominator vanishes or underflows")

    Yhat = np.zeros_like(gamma_hat)
    qs = q[:M].T[:, None, :]
    nz = gamma_hat != 0.0
    if np.any(np.broadcast_to(qs, gamma_hat.shape)[nz] <= 0):
        raise IllPosedWeight("random part of the condition cannot be matched: q vanishes on the integrand support")
    Yhat[nz] = gamma_hat[nz] / np.broadcast_to(qs, gamma_hat.shape)[nz]

    Egamma = psi.means - psi_phi
    num = Egamma.copy()
    tail0 = np.zeros(K)
    for d in range(N):
        num += np.sum(gamma_hat[:, d, :] * beta[d][None, :], axis=1) * grid.dt
        tail0 += np.sum(Yhat[:, d, :] * beta[d][None, :], axis=1) * grid.dt
    A = num / D - tail0

    sol = _solve_from_rep(rates, A, Yhat, beta, y_phi, wiener, keep_paths, workers)
    sol.report = backward_report(sol, problem, psi, gamma_hat, q)
    return sol


def condition_residual(sol: BackwardSolution, problem: BackwardProblem, psi: RandomFieldRep,
                       q: np.ndarray | None = None):
    """Per-path residual of ``kappa u(0) + int rho u dt - psi`` in mode space, ``(P, K)``.

    Quadrature: the martingale part of ``Y`` is held at the left knot and
    integrated exactly against ``rho e^{-lambda (T - t)}``, i.e. step ``j``
    contributes ``(q_j - q_{j+1}) Y_j``; the source response is integrated exactly.
    """
    w, grid = problem.weight, sol.grid
    if q is None:
        q = q_on_grid(w, sol.rates, grid.knots)
    _, psi_phi = source_component(problem.source, sol.rates, grid, w)
    dq = q[:-1] - q[1:]  # (M, K)
    e0 = w.kappa * np.exp(-sol.rates * grid.T)
    psi_samples = psi.samples(sol.wiener)
    res = np.empty((sol.P, sol.K))

    def block(a, b):
        for k in range(sol.K):
            Y = sol.Y_mode(k, slice(a, b))
            val = Y[:, :-1] @ dq[:, k] + e0[k] * Y[:, 0] + psi_phi[k]
            res[a:b, k] = val - psi_samples[a:b, k]

    parallel_blocks(block, sol.P, 1)
    return res, psi_samples


def backward_report(sol: BackwardSolution, problem: BackwardProblem, psi: RandomFieldRep,
                    gamma_hat: np.ndarray, q: np.ndarray) -> ResidualReport:
    rep = ResidualReport()
    res, samples = condition_residual(sol, problem, psi, q)
    abs_res = np.linalg.norm(res, axis=1)
    size = np.linalg.norm(samples, axis=1)
    rel = np.where(size > 0, abs_res / np.where(size > 0, size, 1.0), abs_res)
    rep.add("condition_residual_mean", float(np.mean(rel)), units="relative h-l2 per path")
    rep.add("condition_residual_max", float(np.max(rel)), units="relative h-l2 per path")
    rep.add("condition_residual_abs_max", float(np.max(abs_res)), units="h-l2 per path")
    rep.add("terminal_identity", float(np.max(np.abs(sol.trajectories(slice(0, min(sol.P, 64)))[:, -1]
                                                     - sol.alpha[:min(sol.P, 64)]))))
    late = sol.grid.knots > problem.weight.T - problem.eps + _SUPPORT_TOL
    rep.add("upsilon_after_margin", float(np.max(np.abs(sol.upsilon[:, late, :]))) if np.any(late) else 0.0)
    ratio = 0.0
    for k in range(sol.K):
        for d in range(gamma_hat.shape[1]):
            if np.any(gamma_hat[k, d]):
                b = integrand_bound(problem.weight, float(sol.rates[k]), gamma_hat[k, d], sol.Yhat[k, d], sol.grid)
                ratio = max(ratio, b["max_ratio"])
    rep.add("integrand_bound_ratio", ratio, units="|Yhat| / lower-bound estimate")
    E_alpha2 = sol.A**2 + np.sum(sol.Yhat**2, axis=(1, 2)) * sol.grid.dt
    lam = sol.rates
    rep.add("cF_series", float(np.sum(lam**2 * np.exp(-lam * sol.grid.T) * E_alpha2)),
            units="sum lambda^2 e^{-lambda T} E alpha^2")
    rep.add("lambda_floor", float(problem.basis.eigenvalues[0]), units="1/time (after shift)")
    return rep
