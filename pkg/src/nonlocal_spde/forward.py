"""Forward problem: recover the initial field from a prescribed mean time-average.

The model is ``du = (A u + phi) dt + sum_i (B_i u + h_i) dw_i`` with Dirichlet
boundary and the condition ``E(kappa u(T) + int rho u dt) = mu``.  In the
eigenbasis the mean dynamics decouple, so the averaging functional acts on
``xi = u(0)`` as a diagonal multiplier ``m_k`` and

    xi_k = (mu_k - (M phi_bar)_k) / m_k.

Time stepping is the stochastic exponential Euler scheme: the stiff term is
integrated exactly and the noise is applied as a jump at the left knot of
each step,

    y_{j+1} = e^{-lambda dt} (y_j + J_j) + (exact response to phi_bar on the step),
    J_j = sum_i (B_i y_j + h_i(t_j)) dw_ij.

Between knots the discrete path is the exact deterministic evolution from
``y_j + J_j``; every time integral (the averaging functional, the integral
identity residual) integrates that interpolant exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConditionViolation,
    IllPosedWeight,
    ShapeMismatch,
    ThetaViolation,
    UnstableStep,
)
from .expint import ModeSource, phi
from .report import ResidualReport, discrete_norms
from .spectral import EllipticOperator, SpectralBasis, coefficient, lift, project
from .stochastic import DetIntegrand, TimeGrid, WienerEnsemble, parallel_blocks
from .weight import NonlocalWeight, forward_multiplier, validate

BOUNDARY_TOL = 1e-12


def _nodal(spec, grid) -> np.ndarray:
    if isinstance(spec, np.ndarray) and spec.ndim == 1:
        if spec.size != grid.n_x:
            raise ShapeMismatch(f"nodal array has {spec.size} entries, grid has {grid.n_x}")
        return spec.astype(float)
    return np.asarray(coefficient(spec)(grid.nodes), dtype=float)


@dataclass(frozen=True, eq=False)
class NoiseTerm:
    """One Wiener component: ``(d/dx u) beta_bar + beta u + h``.

    ``beta_bar``, ``beta`` and ``h`` are nodal values; ``h`` may be modulated
    in time by a piecewise-constant ``h_profile``.  ``boundary`` holds the
    gradient coefficient at ``x = 0`` and ``x = L``.
    """

    beta_bar: np.ndarray
    beta: np.ndarray
    h: np.ndarray
    h_profile: DetIntegrand | None = None
    boundary: tuple[float, float] = (0.0, 0.0)

    @classmethod
    def build(cls, grid, beta_bar=0.0, beta=0.0, h=0.0, h_profile=None) -> "NoiseTerm":
        bb = coefficient(beta_bar)
        ends = bb(np.array([0.0, grid.L]))
        return cls(np.asarray(bb(grid.nodes), dtype=float), _nodal(beta, grid), _nodal(h, grid), h_profile,
                   (float(ends[0]), float(ends[1])))

    def mode_matrix(self, basis: SpectralBasis) -> np.ndarray:
        """``h V^T (beta_bar D_c + beta) V`` with centred differences ``D_c``."""
        V = basis.vectors
        pad = np.vstack([np.zeros((1, V.shape[1])), V, np.zeros((1, V.shape[1]))])
        dV = (pad[2:] - pad[:-2]) / (2 * basis.h)
        BV = self.beta_bar[:, None] * dV + self.beta[:, None] * V
        return basis.h * V.T @ BV

    def is_zero(self) -> bool:
        return not (np.any(self.beta_bar) or np.any(self.beta) or np.any(self.h))


def superparabolicity_margin(a_nodes, noise) -> float:
    """``min_x a(x) - 1/2 sum_i beta_bar_i(x)^2`` over the nodes."""
    a_nodes = np.asarray(a_nodes, dtype=float)
    s = np.zeros_like(a_nodes)
    for term in noise:
        s = s + np.asarray(term.beta_bar, dtype=float) ** 2
    return float(np.min(a_nodes - 0.5 * s))


@dataclass(frozen=True, eq=False)
class ForwardProblem:
    """Data of the forward non-local problem.

    ``fluctuation`` maps ``(k, d)`` (0-based mode and Wiener component) to a
    deterministic integrand ``g``; the source then carries the zero-mean part
    ``phi_k(t) - phi_bar_k(t) = sum_d int_0^t g_kd dw_d``.
    """

    operator: EllipticOperator
    basis: SpectralBasis
    weight: NonlocalWeight
    source: ModeSource | None = None
    noise: tuple = ()
    fluctuation: dict = field(default_factory=dict)
    theta: float | None = None
    delta: float = 0.0
    overflow_bound: float = 1e12
    _plans: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        w = self.weight
        if w.direction != "forward":
            raise ShapeMismatch("forward problem needs a weight with direction='forward'")
        K = self.basis.K
        if self.source is None:
            object.__setattr__(self, "source", ModeSource.zero(w.T, K))
        elif self.source.K != K:
            raise ShapeMismatch(f"source has {self.source.K} modes, basis has {K}")
        object.__setattr__(self, "noise", tuple(self.noise))
        theta = self.theta
        if theta is None:
            theta = w.T if w.kappa == 0 else 0.0
        if w.kappa == 0 and theta != w.T:
            raise ThetaViolation("with kappa = 0 the source regularity onset must be theta = T")
        if w.kappa != 0 and not (0.0 <= theta < w.T):
            raise ThetaViolation("with kappa != 0 the source regularity onset must satisfy 0 <= theta < T")
        object.__setattr__(self, "theta", float(theta))
        late = self.source.jump_times()
        late = late[late > theta]
        if late.size and w.kappa != 0:
            raise ThetaViolation(f"mean source jumps at t={late[0]} after theta={theta}; it must be continuous on [theta, T]")
        for i, term in enumerate(self.noise):
            if max(abs(term.boundary[0]), abs(term.boundary[1])) > BOUNDARY_TOL:
                raise ConditionViolation(
                    f"gradient noise coefficient of component {i + 1} must vanish on the boundary, got {term.boundary}"
                )
        for (k, d) in self.fluctuation:
            if not (0 <= k < K and d >= 0):
                raise ShapeMismatch(f"fluctuation index {(k, d)} out of range")

    @property
    def rates(self) -> np.ndarray:
        return self.basis.rates

    @property
    def N(self) -> int:
        n = len(self.noise)
        if self.fluctuation:
            n = max(n, 1 + max(d for _, d in self.fluctuation))
        return n

    @property
    def superparabolicity_margin(self) -> float:
        return superparabolicity_margin(self.operator.a_nodes, self.noise)

    @property
    def is_noiseless(self) -> bool:
        return all(t.is_zero() for t in self.noise) and not any(
            np.any(g.values) for g in self.fluctuation.values())

    def plan(self, grid: TimeGrid, weight: NonlocalWeight | None = None) -> "StepPlan":
        weight = self.weight if weight is None else weight
        key = (grid.T, grid.M, id(weight))
        if key not in self._plans:
            self._plans[key] = StepPlan.build(self.rates, self.source, grid, weight)
        return self._plans[key]


def _merged_segments(source: ModeSource, weight: NonlocalWeight | None, a: float, b: float):
    cuts = {a, b}
    if weight is not None:
        cuts.update(float(t) for t in weight.breakpoints if a < t < b)
    cuts = sorted(cuts)
    for c0, c1 in zip(cuts[:-1], cuts[1:]):
        rho = 0.0 if weight is None else weight.rho_at(0.5 * (c0 + c1))
        for t0, t1, f0, f1 in source.segments(c0, c1):
            yield t0, t1, f0, f1, rho


@dataclass(frozen=True, eq=False)
class StepPlan:
    """Per-step exact coefficients of the mode recursion.

    For step ``j`` (all arrays ``(M, K)``): ``decay`` maps the post-jump state
    to the next knot; ``forced`` is the response to ``phi_bar`` from zero;
    ``held`` the response to a unit source held over the step; the ``*_int``
    arrays are the matching ``rho``-weighted integrals over the step.
    """

    grid: TimeGrid
    decay: np.ndarray
    forced: np.ndarray
    held: np.ndarray
    hom_int: np.ndarray
    forced_int: np.ndarray
    held_int: np.ndarray

    @classmethod
    def build(cls, rates, source: ModeSource, grid: TimeGrid, weight: NonlocalWeight | None):
        rates = np.asarray(rates, dtype=float)
        M, K = grid.M, rates.size
        arrays = {n: np.zeros((M, K)) for n in ("decay", "forced", "held", "hom_int", "forced_int", "held_int")}
        cache = {}

        def coeffs(tau):
            if tau not in cache:
                z = -rates * tau
                cache[tau] = (np.exp(z), phi(1, z), phi(2, z), phi(3, z))
            return cache[tau]

        knots = grid.knots
        for j in range(M):
            H, Hi = np.ones(K), np.zeros(K)
            F, Fi = np.zeros(K), np.zeros(K)
            G, Gi = np.zeros(K), np.zeros(K)
            for t0, t1, f0, f1, rho in _merged_segments(source, weight, knots[j], knots[j + 1]):
                tau = t1 - t0
                E, p1, p2, p3 = coeffs(tau)
                df = f1 - f0
                if rho != 0.0:
                    Hi = Hi + rho * tau * p1 * H
                    Fi = Fi + rho * tau * (p1 * F + tau * (p2 * f0 + p3 * df))
                    Gi = Gi + rho * tau * (p1 * G + tau * p2)
                H = E * H
                F = E * F + tau * (p1 * f0 + p2 * df)
                G = E * G + tau * p1
            arrays["decay"][j], arrays["forced"][j], arrays["held"][j] = H, F, G
            arrays["hom_int"][j], arrays["forced_int"][j], arrays["held_int"][j] = Hi, Fi, Gi
        return cls(grid, **arrays)


@dataclass
class MeanTrajectory:
    grid: TimeGrid
    values: np.ndarray  # (M+1, K)


def mean_evolve(basis: SpectralBasis, xi, source: ModeSource, grid: TimeGrid) -> MeanTrajectory:
    """Exact mode means ``u_bar_k(t_j)`` for a piecewise-linear mean source."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (basis.K,):
        raise ShapeMismatch(f"xi needs {basis.K} coefficients")
    plan = StepPlan.build(basis.rates, source, grid, None)
    out = np.empty((grid.M + 1, basis.K))
    out[0] = xi
    for j in range(grid.M):
        out[j + 1] = plan.decay[j] * out[j] + plan.forced[j]
    return MeanTrajectory(grid, out)


def apply_M0(basis: SpectralBasis, weight: NonlocalWeight, xi) -> np.ndarray:
    return forward_multiplier(weight, basis.rates) * np.asarray(xi, dtype=float)


def apply_M(basis: SpectralBasis, weight: NonlocalWeight, source: ModeSource) -> np.ndarray:
    """``kappa u_bar(T) + int rho u_bar dt`` for the response to ``source`` from zero."""
    rates = basis.rates
    y = np.zeros(basis.K)
    total = np.zeros(basis.K)
    for t0, t1, f0, f1, rho in _merged_segments(source, weight, 0.0, weight.T):
        tau = t1 - t0
        z = -rates * tau
        p1, p2 = phi(1, z), phi(2, z)
        df = f1 - f0
        if rho != 0.0:
            total = total + rho * tau * (p1 * y + tau * (p2 * f0 + phi(3, z) * df))
        y = np.exp(z) * y + tau * (p1 * f0 + p2 * df)
    return total + weight.kappa * y


@dataclass
class Recovery:
    xi: np.ndarray
    multipliers: np.ndarray
    mu_coeffs: np.ndarray
    source_part: np.ndarray
    tail: float
    ill_posed: bool

    @property
    def amplification(self) -> np.ndarray:
        return 1.0 / self.multipliers


def recover_modes(mu_coeffs, source: ModeSource, basis: SpectralBasis, weight: NonlocalWeight,
                  allow_ill_posed: bool = False, tail: float = 0.0) -> Recovery:
    report = validate(weight)
    report.require(allow_ill_posed)
    mu_coeffs = np.asarray(mu_coeffs, dtype=float)
    if mu_coeffs.shape != (basis.K,):
        raise ShapeMismatch(f"mu needs {basis.K} mode coefficients")
    m = forward_multiplier(weight, basis.rates)
    if np.any(m <= 0) or not np.all(np.isfinite(1.0 / m)):
        raise IllPosedWeight("spectral multiplier is zero or underflows; the averaging functional is not invertible")
    source_part = apply_M(basis, weight, source)
    xi = (mu_coeffs - source_part) / m
    return Recovery(xi, m, mu_coeffs, source_part, float(tail), not report.valid)


def recover_initial(mu, source: ModeSource, basis: SpectralBasis, weight: NonlocalWeight,
                    allow_ill_posed: bool = False, tail_fraction: float = 1e-2) -> Recovery:
    """``xi = M0^{-1}(mu - M phi_bar)`` from a nodal field ``mu``.

    The part of ``mu`` outside the retained modes is reported as ``tail``;
    a :class:`~nonlocal_spde.errors.TailTooLarge` warning is issued when it
    exceeds ``tail_fraction * ||mu||``.
    """
    from .errors import TailTooLarge

    mu = np.asarray(mu, dtype=float)
    coeffs = project(mu, basis)
    tail = basis.grid.norm(mu - lift(coeffs, basis))
    total = basis.grid.norm(mu)
    if total > 0 and tail > tail_fraction * total:
        warnings.warn(f"mu has {tail / total:.3g} of its norm outside the {basis.K} retained modes", TailTooLarge)
    return recover_modes(coeffs, source, basis, weight, allow_ill_posed, tail)


class _Kernel:
    """Mode-space noise data of a forward problem on a given grid."""

    def __init__(self, problem: ForwardProblem, grid: TimeGrid, weight=None):
        self.problem = problem
        self.plan = problem.plan(grid, weight)
        self.grid = grid
        K = problem.basis.K
        self.B = [t.mode_matrix(problem.basis) for t in problem.noise]
        self.h = []
        for t in problem.noise:
            hk = project(t.h, problem.basis)
            prof = np.ones(grid.M) if t.h_profile is None else t.h_profile.on_grid(grid)
            self.h.append(prof[:, None] * hk[None, :])  # (M, K)
        self.active = [i for i, t in enumerate(problem.noise) if not t.is_zero()]
        self.fluct = {}
        for (k, d), g in problem.fluctuation.items():
            self.fluct.setdefault(d, np.zeros((grid.M, K)))[:, k] = g.on_grid(grid)
        self.K = K

    def jump(self, y, dw, j):
        """``sum_i (B_i y + h_i(t_j)) dw_ij`` with a fixed summation order."""
        J = np.zeros_like(y)
        for i in self.active:
            B = self.B[i]
            acc = np.zeros_like(y)
            for l in range(self.K):
                acc += y[:, l:l + 1] * B[:, l][None, :]
            J += (acc + self.h[i][j][None, :]) * dw[:, i, j][:, None]
        return J

    def fluct_increment(self, dw, j):
        out = None
        for d, g in self.fluct.items():
            inc = g[j][None, :] * dw[:, d, j][:, None]
            out = inc if out is None else out + inc
        return out

    def advance(self, y, fl, dw, j0, j1, functional=None, traj=None, mean_acc=None, sq_acc=None):
        """Run steps ``j0..j1-1`` in place on a block of paths."""
        plan, bound = self.plan, self.problem.overflow_bound
        for j in range(j0, j1):
            J = self.jump(y, dw, j) if self.active else None
            post = y if J is None else y + J
            if functional is not None:
                functional += plan.hom_int[j] * post + plan.forced_int[j]
                if fl is not None:
                    functional += plan.held_int[j] * fl
            y_new = plan.decay[j] * post + plan.forced[j]
            if fl is not None:
                y_new = y_new + plan.held[j] * fl
                inc = self.fluct_increment(dw, j)
                fl = fl + inc
            y = y_new
            if not np.all(np.abs(y) < bound):
                raise UnstableStep(f"mode amplitude exceeded {bound:g} at step {j + 1}; "
                                   "check the superparabolicity margin or refine the time step")
            k = j + 1 - j0
            if traj is not None:
                traj[:, k] = y
            if mean_acc is not None:
                mean_acc[k] += y.sum(axis=0)
                sq_acc[k] += np.sum(y * y, axis=1).sum()
        return y, fl


@dataclass
class ModeEnsemble:
    problem: ForwardProblem
    wiener: WienerEnsemble
    xi: np.ndarray
    terminal: np.ndarray  # (P, K)
    functional: np.ndarray  # (P, K): kappa y(T) + int rho y dt per path
    mean: np.ndarray  # (M+1, K)
    second_moment: np.ndarray  # (M+1,): E sum_k y_k^2
    y: np.ndarray | None = None  # (P, M+1, K) when kept

    @property
    def grid(self) -> TimeGrid:
        return self.wiener.grid

    @property
    def P(self) -> int:
        return self.terminal.shape[0]


KEEP_PATHS_LIMIT = 2_000_000


def simulate_forward(problem: ForwardProblem, xi, wiener: WienerEnsemble, workers: int = 1,
                     keep_paths: bool | None = None) -> ModeEnsemble:
    """Monte Carlo mode trajectories from the deterministic initial coefficients ``xi``.

    Trajectories are stored when ``keep_paths`` is true (default: only when
    ``P (M+1) K`` is below ``KEEP_PATHS_LIMIT``).  Path means, second moments
    and the per-path averaging functional are always accumulated.
    """
    grid = wiener.grid
    if abs(grid.T - problem.weight.T) > 1e-12 * max(1.0, grid.T):
        raise ShapeMismatch(f"time grid horizon {grid.T} differs from weight horizon {problem.weight.T}")
    if wiener.N < problem.N:
        raise ShapeMismatch(f"problem uses {problem.N} Wiener components, ensemble has {wiener.N}")
    dhat = problem.superparabolicity_margin
    if dhat <= 0 or dhat < problem.delta:
        raise ConditionViolation(f"superparabolicity margin {dhat:.6g} is below the required {max(problem.delta, 0.0)}")
    xi = np.asarray(xi, dtype=float)
    K, P, M = problem.basis.K, wiener.P, grid.M
    if xi.shape != (K,):
        raise ShapeMismatch(f"xi needs {K} coefficients")
    if keep_paths is None:
        keep_paths = P * (M + 1) * K <= KEEP_PATHS_LIMIT
    kern = _Kernel(problem, grid)
    has_fl = bool(kern.fluct)

    terminal = np.empty((P, K))
    functional = np.empty((P, K))
    traj = np.empty((P, M + 1, K)) if keep_paths else None

    def block(a, b):
        n = b - a
        y = np.broadcast_to(xi, (n, K)).copy()
        fl = np.zeros((n, K)) if has_fl else None
        func = np.zeros((n, K))
        mean_acc = np.zeros((M + 1, K))
        sq_acc = np.zeros(M + 1)
        mean_acc[0] = y.sum(axis=0)
        sq_acc[0] = np.sum(y * y, axis=1).sum()
        tr = None
        if traj is not None:
            tr = traj[a:b]
            tr[:, 0] = y
        y, _ = kern.advance(y, fl, wiener.dw[a:b], 0, M, func, tr, mean_acc, sq_acc)
        func += problem.weight.kappa * y
        terminal[a:b] = y
        functional[a:b] = func
        return mean_acc, sq_acc

    parts = parallel_blocks(block, P, workers)
    mean = np.zeros((M + 1, K))
    sq = np.zeros(M + 1)
    for m_acc, s_acc in parts:
        mean += m_acc
        sq += s_acc
    return ModeEnsemble(problem, wiener, xi, terminal, functional, mean / P, sq / P, traj)


def evolve_from(problem: ForwardProblem, y0, wiener: WienerEnsemble, j0: int, j1: int,
                fl0=None, weight=None):
    """Continue per-path states ``y0`` (``(P, K)``) over steps ``j0..j1-1``.

    Returns ``(y, fluctuation_state, partial_functional)``; the functional
    excludes the ``kappa`` term.  Used for restart checks.
    """
    kern = _Kernel(problem, wiener.grid, weight)
    y = np.array(y0, dtype=float)
    fl = None
    if kern.fluct:
        fl = np.zeros_like(y) if fl0 is None else np.array(fl0, dtype=float)
    func = np.zeros_like(y)
    y, fl = kern.advance(y, fl, wiener.dw, j0, j1, func)
    return y, fl, func


@dataclass
class AverageEstimate:
    coeffs: np.ndarray
    stderr: np.ndarray
    P: int

    @property
    def stderr_defined(self) -> bool:
        return self.P > 1

    def field(self, basis: SpectralBasis) -> np.ndarray:
        return lift(self.coeffs, basis)


def functional_from_paths(ens: ModeEnsemble, weight: NonlocalWeight) -> np.ndarray:
    """Per-path averaging functional recomputed from stored trajectories for another weight."""
    if ens.y is None:
        raise ShapeMismatch("trajectories were not kept; rerun with keep_paths=True")
    problem = ens.problem
    kern = _Kernel(problem, ens.grid, weight)
    plan = kern.plan
    y = ens.y
    dw = ens.wiener.dw
    fl = np.zeros((ens.P, problem.basis.K)) if kern.fluct else None
    total = np.zeros((ens.P, problem.basis.K))
    for j in range(ens.grid.M):
        yj = y[:, j]
        post = yj + kern.jump(yj, dw, j) if kern.active else yj
        total += plan.hom_int[j] * post + plan.forced_int[j]
        if fl is not None:
            total += plan.held_int[j] * fl
            fl = fl + kern.fluct_increment(dw, j)
    return total + weight.kappa * y[:, -1]


def nonlocal_average(ens: ModeEnsemble, weight: NonlocalWeight | None = None) -> AverageEstimate:
    """Monte Carlo estimate of ``E(kappa u(T) + int rho u dt)`` in mode coordinates.

    With ``P = 1`` the standard errors are NaN (and ``stderr_defined`` is false).
    """
    if weight is None or weight is ens.problem.weight:
        values = ens.functional
    else:
        values = functional_from_paths(ens, weight)
    P = values.shape[0]
    est = values.mean(axis=0)
    if P > 1:
        se = values.std(axis=0, ddof=1) / np.sqrt(P)
    else:
        se = np.full(values.shape[1], np.nan)
    return AverageEstimate(est, se, P)


@dataclass
class ForwardSolution:
    recovery: Recovery
    ensemble: ModeEnsemble
    estimate: AverageEstimate
    report: ResidualReport

    @property
    def xi(self) -> np.ndarray:
        return self.recovery.xi


def solve_forward_nonlocal(mu, problem: ForwardProblem, wiener: WienerEnsemble, allow_ill_posed: bool = False,
                           workers: int = 1, keep_paths: bool | None = None,
                           tail_fraction: float = 1e-2) -> ForwardSolution:
    """Recover ``xi``, simulate, and check the averaged condition by Monte Carlo.

    ``mu`` is a nodal field (length ``n_x``).
    """
    basis = problem.basis
    rec = recover_initial(mu, problem.source, basis, problem.weight, allow_ill_posed, tail_fraction)
    ens = simulate_forward(problem, rec.xi, wiener, workers, keep_paths)
    est = nonlocal_average(ens)

    rep = ResidualReport()
    diff = est.coeffs - rec.mu_coeffs
    mu_norm = float(np.linalg.norm(rec.mu_coeffs))
    rep.add("recovery_residual", np.linalg.norm(diff), units="h-l2 of mu")
    rep.add("recovery_residual_rel", np.linalg.norm(diff) / mu_norm if mu_norm > 0 else 0.0)
    if est.stderr_defined:
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(est.stderr > 0, np.abs(diff) / est.stderr, np.where(diff == 0, 0.0, np.inf))
        rep.add("recovery_max_z", float(np.max(z)), units="MC standard errors")
    rep.add("truncation_tail", rec.tail, units="h-l2 of mu")
    rep.add("max_amplification", float(np.max(rec.amplification)), units="1/m_k")
    mean_fields = lift(ens.mean, basis)
    norms = [discrete_norms(u, basis.h) for u in mean_fields]
    rep.add("mean_l2_max", max(n["l2"] for n in norms), units="h-l2, max over t")
    rep.add("mean_grad_max", max(n["grad"] for n in norms), units="forward-difference gradient, max over t")
    rep.add("sample_l2_max", float(np.sqrt(np.max(ens.second_moment))), units="(E||u||^2)^(1/2), max over t")
    rep.add("superparabolicity_margin", problem.superparabolicity_margin)
    rep.add("lambda_floor", float(basis.eigenvalues[0]), units="1/time (after shift)")
    return ForwardSolution(rec, ens, est, rep)
