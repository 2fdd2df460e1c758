"""Numerical checks of the integral identities, coefficient conditions and estimates.

Every check returns plain numbers (or a :class:`ResidualReport`); tolerances
come from :class:`Tolerances`, whose defaults are documented on the fields.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .backward import BackwardProblem, BackwardSolution, _solve_from_rep, source_component
from .errors import ShapeMismatch
from .expint import ModeSource
from .forward import ForwardProblem, ModeEnsemble, StepPlan, _Kernel, evolve_from, superparabolicity_margin
from .report import ResidualReport
from .spectral import EllipticOperator, SpectralBasis
from .stochastic import TimeGrid, WienerEnsemble
from .weight import NonlocalWeight, WeightReport, forward_multiplier, q_factor, validate


@dataclass
class Tolerances:
    forward_integral: float = 1e-10  # bookkeeping identity of the forward scheme, absolute
    backward_integral: float = 1e-10  # bookkeeping identity of the backward construction, absolute
    condition_residual: float = 5e-3  # pathwise backward condition, relative h-l2
    residual_ratio: float = 1.8  # minimum residual reduction when dt -> dt/4
    restart: float = 1e-10  # split-vs-whole discrepancy
    round_trip: float = 1e-8  # backward representation round trip
    recovery: float = 1e-6  # relative xi error of the exact forward round trip
    mc_z: float = 3.0  # Monte Carlo agreement, in standard errors
    bsde_order: float = 0.4  # minimum observed order of the BSDE residual
    gram: float = 1e-10  # eigenbasis orthonormality
    eigen_residual: float = 1e-8  # relative eigen-residual
    delta: float = 0.0  # required superparabolicity margin
    tail_fraction: float = 1e-2  # truncation tail warning threshold, fraction of ||mu||

    @classmethod
    def from_json(cls, data: dict | None) -> "Tolerances":
        data = data or {}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ShapeMismatch(f"unknown tolerance keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_json(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- identities

def forward_integral_residual(ens: ModeEnsemble, grid: TimeGrid | None = None) -> float:
    """Largest defect of the integral form of the forward equation along stored paths.

    ``y_n - y_0 - sum_{j<n} [int (-lambda y + phi) ds + J_j]`` where the time
    integral is taken exactly over the scheme's interpolant and ``J_j`` are the
    noise jumps.  Passing a ``grid`` with another step length evaluates the
    identity with mismatched quadrature (the defect is then not small).
    """
    if ens.y is None:
        raise ShapeMismatch("trajectories were not kept; rerun with keep_paths=True")
    problem = ens.problem
    grid = ens.grid if grid is None else grid
    if grid.M != ens.grid.M:
        raise ShapeMismatch("grid for the residual must have the same number of steps")
    kern = _Kernel(problem, ens.grid)
    unit = NonlocalWeight.constant(grid.T, 1.0)
    plan = StepPlan.build(problem.rates, problem.source, grid, unit)
    lam = problem.rates
    mean_src = _source_step_integrals(problem.source, grid)
    y, dw = ens.y, ens.wiener.dw
    fl = np.zeros_like(y[:, 0]) if kern.fluct else None
    acc = y[:, 0].copy()
    worst = 0.0
    for j in range(grid.M):
        yj = y[:, j]
        J = kern.jump(yj, dw, j) if kern.active else 0.0
        post = yj + J
        integral = plan.hom_int[j] * post + plan.forced_int[j]
        drift = -lam * integral + mean_src[j]
        if fl is not None:
            drift = drift - lam * plan.held_int[j] * fl + grid.dt * fl
            fl = fl + kern.fluct_increment(dw, j)
        acc = acc + drift + J
        worst = max(worst, float(np.max(np.abs(y[:, j + 1] - acc))))
    return worst


def _source_step_integrals(source: ModeSource, grid: TimeGrid) -> np.ndarray:
    out = np.zeros((grid.M, source.K))
    knots = grid.knots
    for j in range(grid.M):
        for t0, t1, f0, f1 in source.segments(knots[j], knots[j + 1]):
            out[j] += 0.5 * (t1 - t0) * (f0 + f1)
    return out


def backward_integral_residual(sol: BackwardSolution, problem: BackwardProblem) -> float:
    """Largest defect of the integral form of the backward equation.

    ``y_n - y_M - sum_{j>=n} [int (-lambda y + phi) ds + beta_j Upsilon_j dt - Upsilon_j dw_j]``
    with ``int_{t_j}^{t_{j+1}} -lambda y ds`` taken as ``-(1 - e^{-lambda dt}) y_{j+1}``
    for the martingale part (the exponential right-point rule matching the
    construction) and exactly for the source response.
    """
    grid = sol.grid
    M, lam = grid.M, sol.rates
    y = sol.trajectories()
    hom = y - sol.y_phi[None]
    phi_int = _backward_source_step_integrals(problem.source, lam, grid)
    decay = np.exp(-lam * grid.dt)
    dw = sol.wiener.dw
    acc = y[:, M].copy()
    worst = 0.0
    for j in range(M - 1, -1, -1):
        step = -(1.0 - decay) * hom[:, j + 1] + phi_int[j]
        for d in range(sol.upsilon.shape[0]):
            U = sol.upsilon[d, j]
            step = step + sol.beta[d, j] * U * grid.dt - U[None, :] * dw[:, d, j][:, None]
        acc = acc + step
        worst = max(worst, float(np.max(np.abs(y[:, j] - acc))))
    return worst


def _backward_source_step_integrals(source: ModeSource, lam, grid: TimeGrid) -> np.ndarray:
    """Exact ``int_{t_j}^{t_{j+1}} (-lambda y_phi + phi) ds`` per step, ``(M, K)``."""
    unit = NonlocalWeight.constant(grid.T, 1.0)
    plan = StepPlan.build(lam, source.reversed(grid.T), grid, unit)
    M = grid.M
    z = np.zeros((M + 1, source.K))
    z_int = np.zeros((M, source.K))
    for j in range(M):
        z_int[j] = plan.hom_int[j] * z[j] + plan.forced_int[j]
        z[j + 1] = plan.decay[j] * z[j] + plan.forced[j]
    src = _source_step_integrals(source.reversed(grid.T), grid)
    # reversed step i covers forward step M-1-i
    return (-lam * z_int + src)[::-1]


def bsde_residual(sol: BackwardSolution, problem: BackwardProblem) -> float:
    """Sample-L2 norm of ``max_n |R_n|`` for the plain Euler residual of the mode BSDE.

    ``R_n = y_n - y_0 - sum_{j<n} [(lambda y_j - phi_j - sum_d beta_dj Upsilon_dj) dt + sum_d Upsilon_dj dw_dj]``.
    """
    grid = sol.grid
    y = sol.trajectories()
    lam = sol.rates
    phi_left = np.array([problem.source(t) for t in grid.knots[:-1]])
    dw = sol.wiener.dw
    incr = (lam[None, None, :] * y[:, :-1] - phi_left[None]) * grid.dt
    for d in range(sol.upsilon.shape[0]):
        U = sol.upsilon[d, :-1]  # (M, K)
        incr = incr - (sol.beta[d][:, None] * U)[None] * grid.dt + U[None] * dw[:, d, :, None]
    R = y[:, 1:] - y[:, :1] - np.cumsum(incr, axis=1)
    worst = np.max(np.sum(R**2, axis=2), axis=1)
    return float(np.sqrt(np.mean(worst)))


def observed_order(dts, values) -> float:
    """Least-squares slope of ``log(value)`` against ``log(dt)``."""
    x, y = np.log(np.asarray(dts, dtype=float)), np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------- conditions

def superparabolicity_check(op: EllipticOperator, noise, delta: float = 0.0) -> tuple[float, bool]:
    """``(delta_hat, passed)`` with ``delta_hat = min_x a(x) - 1/2 sum_i beta_bar_i(x)^2``."""
    dhat = superparabolicity_margin(op.a_nodes, noise)
    return dhat, bool(dhat > 0 and dhat >= delta)


@dataclass
class ConditionReport:
    coefficients_ok: bool
    boundary_ok: bool
    margin: float
    delta: float
    weight: WeightReport
    messages: list[str] = field(default_factory=list)

    @property
    def superparabolic(self) -> bool:
        return self.margin > 0 and self.margin >= self.delta

    @property
    def valid(self) -> bool:
        return self.coefficients_ok and self.boundary_ok and self.superparabolic and self.weight.valid


def check_conditions(op: EllipticOperator, weight: NonlocalWeight, noise=(), delta: float = 0.0,
                     boundary_tol: float = 1e-12) -> ConditionReport:
    """Classify a data set against the coefficient, boundary, coercivity and weight requirements."""
    msgs = []
    coeff_ok = bool(np.all(np.isfinite(op.a_mid)) and np.all(op.a_mid > 0) and np.all(np.isfinite(op.a0)))
    if not coeff_ok:
        msgs.append("diffusion must be finite and positive, a0 finite")
    boundary_ok = True
    for i, term in enumerate(noise):
        if max(abs(term.boundary[0]), abs(term.boundary[1])) > boundary_tol:
            boundary_ok = False
            msgs.append(f"gradient noise coefficient {i + 1} does not vanish on the boundary")
    margin = superparabolicity_margin(op.a_nodes, noise)
    if not (margin > 0 and margin >= delta):
        msgs.append(f"superparabolicity margin {margin:.6g} below {max(delta, 0.0)}")
    wrep = validate(weight)
    msgs.extend(wrep.messages)
    return ConditionReport(coeff_ok, boundary_ok, margin, delta, wrep, msgs)


# ---------------------------------------------------------------- conditioning

def conditioning_table(lam, weight: NonlocalWeight, allow_ill_posed: bool = False) -> list[dict]:
    """Rows ``{k, lambda, m, inv_m, q0}`` for the given decay rates."""
    validate(weight).require(allow_ill_posed)
    lam = np.asarray(lam, dtype=float)
    m = forward_multiplier(weight, lam)
    q0 = q_factor(weight, lam, 0.0)
    with np.errstate(divide="ignore"):
        inv = 1.0 / m
    return [{"k": k + 1, "lambda": float(lam[k]), "m": float(m[k]), "inv_m": float(inv[k]), "q0": float(q0[k])}
            for k in range(lam.size)]


def conditioning_report(basis: SpectralBasis, weight: NonlocalWeight, allow_ill_posed: bool = False) -> ResidualReport:
    rows = conditioning_table(basis.rates, weight, allow_ill_posed)
    rep = ResidualReport()
    rep.tables["conditioning"] = rows
    inv = np.array([r["inv_m"] for r in rows])
    rep.add("max_amplification", float(np.max(inv)), units="1/m_k")
    rep.add("amplification_monotone", float(np.all(np.diff(inv) >= 0)))
    # growth between the two largest retained modes, per unit of lambda
    if len(rows) > 1:
        dl = rows[-1]["lambda"] - rows[-2]["lambda"]
        rep.add("log_growth_rate", float(np.log(inv[-1] / inv[-2]) / dl) if dl > 0 else 0.0,
                units="d log(1/m) / d lambda")
    rep.add("exponential_growth", float(weight.is_zero() and weight.kappa > 0))
    return rep


# ---------------------------------------------------------------- stability

@dataclass
class ProbeResult:
    relative: list[float]
    absolute: list[float]
    skipped: int

    @property
    def max_relative(self) -> float:
        return max(self.relative, default=float("nan"))

    @property
    def max_absolute(self) -> float:
        return max(self.absolute, default=float("nan"))


def stability_probe(solver, base, size: float, trials: int = 20, seed: int = 0, directions=None) -> ProbeResult:
    """Empirical output/input gains of ``solver`` around ``base``.

    Each trial perturbs ``base`` by ``size * ||base|| * d / ||d||`` (``d``
    random or taken from ``directions``).  Relative gain is
    ``(||delta out|| / ||out||) / (||delta in|| / ||in||)``; zero perturbations
    (and zero outputs for the relative gain) are skipped.
    """
    base = np.asarray(base, dtype=float)
    out0 = np.asarray(solver(base), dtype=float)
    scale = size * (np.linalg.norm(base) or 1.0)
    rng = np.random.default_rng(seed)
    rel, ab, skipped = [], [], 0
    dirs = directions if directions is not None else (rng.standard_normal(base.shape) for _ in range(trials))
    for d in dirs:
        d = np.asarray(d, dtype=float)
        nd = np.linalg.norm(d)
        if nd == 0 or scale == 0:
            skipped += 1
            continue
        dx = scale * d / nd
        dout = np.asarray(solver(base + dx), dtype=float) - out0
        din = np.linalg.norm(dx)
        ab.append(float(np.linalg.norm(dout) / din))
        n_in, n_out = np.linalg.norm(base), np.linalg.norm(out0)
        if n_in > 0 and n_out > 0:
            rel.append(float((np.linalg.norm(dout) / n_out) / (din / n_in)))
    return ProbeResult(rel, ab, skipped)


# ---------------------------------------------------------------- restarts

def forward_restart_check(problem: ForwardProblem, xi, wiener: WienerEnsemble, tau: float) -> float:
    """Discrepancy between one run on ``[0, T]`` and two runs split at ``tau``.

    Compares terminal states and the averaging functional.
    """
    grid = wiener.grid
    j = grid.index_of(tau)
    y0 = np.broadcast_to(np.asarray(xi, dtype=float), (wiener.P, problem.basis.K))
    y_full, _, f_full = evolve_from(problem, y0, wiener, 0, grid.M)
    y_mid, fl_mid, f1 = evolve_from(problem, y0, wiener, 0, j)
    y_end, _, f2 = evolve_from(problem, y_mid, wiener, j, grid.M, fl_mid)
    return float(max(np.max(np.abs(y_full - y_end)), np.max(np.abs(f_full - (f1 + f2)))))


def backward_restart_check(sol: BackwardSolution, problem: BackwardProblem, tau: float) -> float:
    """Re-solve on ``[0, tau]`` from ``u(tau)`` (same increments) and compare.

    The terminal value at ``tau`` is given in representation form:
    mean ``e^{-lambda (T - tau)} (A + int_tau^T Yhat beta ds) + y_phi(tau)`` and
    integrands ``e^{-lambda (T - tau)} Yhat`` on ``[0, tau]``.
    """
    grid = sol.grid
    j = grid.index_of(tau)
    if j == 0:
        return 0.0
    lam = sol.rates
    dec = np.exp(-lam * (grid.T - tau))
    A_tau = dec * (sol.A + sol.tail[j]) + sol.y_phi[j]
    Yhat_tau = sol.Yhat[:, :, :j] * dec[:, None, None]
    sub = grid.sub(0, j)
    src = problem.source.restricted(0.0, tau) if tau > 0 else problem.source
    y_phi, _ = source_component(src, lam, sub)
    part = _solve_from_rep(lam, A_tau, Yhat_tau, sol.beta[:, :j], y_phi, sol.wiener.window(0, j), True, 1)
    full = sol.trajectories()[:, : j + 1]
    return float(np.max(np.abs(full - part.y)))


def semigroup_restart_check(run, problem, tau: float, xi=None) -> float:
    """Dispatch to the forward (ensemble) or backward (solution) restart check."""
    if isinstance(run, BackwardSolution):
        return backward_restart_check(run, problem, tau)
    if isinstance(run, ModeEnsemble):
        return forward_restart_check(problem, run.xi if xi is None else xi, run.wiener, tau)
    if isinstance(run, WienerEnsemble):
        if xi is None:
            raise ShapeMismatch("forward restart from an ensemble needs xi")
        return forward_restart_check(problem, xi, run, tau)
    raise TypeError(f"unsupported run type {type(run).__name__}")


def ill_posed_amplification(lam, T: float) -> np.ndarray:
    """``e^{lambda T}``: the recovery gain of the pure terminal/initial condition."""
    return np.exp(np.asarray(lam, dtype=float) * T)


__all__ = [
    "Tolerances", "forward_integral_residual", "backward_integral_residual", "bsde_residual",
    "observed_order", "superparabolicity_check", "ConditionReport", "check_conditions",
    "conditioning_table", "conditioning_report", "ProbeResult", "stability_probe",
    "forward_restart_check", "backward_restart_check", "semigroup_restart_check",
    "ill_posed_amplification",
]
