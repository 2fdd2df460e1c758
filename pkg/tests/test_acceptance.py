"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from nonlocal_spde.backward import (
    BackwardProblem,
    RandomFieldRep,
    backward_cauchy,
    condition_map,
    condition_residual,
    solve_backward_nonlocal,
)
from nonlocal_spde.cli import run
from nonlocal_spde.expint import ModeSource
from nonlocal_spde.forward import (
    ForwardProblem,
    NoiseTerm,
    apply_M,
    apply_M0,
    mean_evolve,
    nonlocal_average,
    recover_initial,
    simulate_forward,
)
from nonlocal_spde.spectral import Grid1D, SpectralBasis, assemble_operator, eigendecompose, lift, project
from nonlocal_spde.stochastic import DetIntegrand, TimeGrid, sample_wiener
from nonlocal_spde.verification import (
    bsde_residual,
    check_conditions,
    conditioning_report,
    conditioning_table,
    observed_order,
    superparabolicity_check,
)
from nonlocal_spde.weight import NonlocalWeight

SCEN = Path(__file__).resolve().parents[1] / "scenarios"


@pytest.fixture
def verdict(request):
    """Print one PASS/FAIL line for the criterion, then assert."""
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(label: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        else:
            print(line)
        assert ok, line

    return emit


def _pl_source(K, T=1.0):
    return ModeSource([0.0, 0.4, T], [np.linspace(1, 2, K), -np.ones(K), np.linspace(0.5, 0.0, K)])


def test_1_eigen_accuracy(verdict):
    t0 = time.perf_counter()
    grid = Grid1D(np.pi, 511)
    basis = eigendecompose(assemble_operator(grid), 5)
    elapsed = time.perf_counter() - t0
    k = np.arange(1, 6)
    rel = np.abs(basis.eigenvalues - k**2) / k**2
    closed = 4 / grid.h**2 * np.sin(k * grid.h / 2) ** 2
    closed_err = np.max(np.abs(basis.eigenvalues - closed) / closed)
    ok = rel.max() <= 2e-4 and closed_err <= 1e-12 and elapsed < 1.0
    verdict("1 eigen accuracy", ok,
            f"max rel vs k^2 {rel.max():.3e} (<= 2e-4), vs closed form {closed_err:.1e}, {elapsed:.3f} s (< 1 s)")


def test_2_forward_recovery(verdict):
    t0 = time.perf_counter()
    grid = Grid1D(np.pi, 255)
    basis = eigendecompose(assemble_operator(grid), 8)
    w = NonlocalWeight.constant(1.0)
    src = _pl_source(8)
    xi_field = np.sin(grid.nodes) + 0.3 * np.sin(3 * grid.nodes)
    xi = project(xi_field, basis)
    mu_exact = lift(apply_M0(basis, w, xi) + apply_M(basis, w, src), basis)
    err_exact = grid.norm(lift(recover_initial(mu_exact, src, basis, w).xi, basis) - xi_field) / grid.norm(xi_field)
    elapsed = time.perf_counter() - t0
    g = TimeGrid(1.0, 1000)
    u = mean_evolve(basis, xi, src, g).values
    mu_quad = lift(g.dt * (u[1:] + u[:-1]).sum(axis=0) / 2, basis)
    err_quad = grid.norm(lift(recover_initial(mu_quad, src, basis, w).xi, basis) - xi_field) / grid.norm(xi_field)
    ok = err_exact <= 1e-6 and err_quad <= 1e-3 and elapsed < 1.0
    verdict("2 forward recovery", ok,
            f"exact {err_exact:.2e} (<= 1e-6), dt=1e-3 trapezoid {err_quad:.2e} (<= 1e-3), {elapsed:.3f} s (< 1 s)")


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_3_stochastic_consistency(verdict, seed):
    grid = Grid1D(np.pi, 127)
    basis = eigendecompose(assemble_operator(grid), 8)
    w = NonlocalWeight.constant(1.0)
    src = _pl_source(8)
    xi = np.zeros(8)
    xi[0], xi[2] = 1.0, 0.3
    noise = (NoiseTerm.build(grid, beta=0.2, h=basis.vectors[:, 0]),)
    p = ForwardProblem(assemble_operator(grid), basis, w, src, noise)
    t0 = time.perf_counter()
    ens = simulate_forward(p, xi, sample_wiener(seed, 10_000, 1, TimeGrid(1.0, 1000)), workers=4)
    est = nonlocal_average(ens)
    elapsed = time.perf_counter() - t0
    exact = apply_M0(basis, w, xi) + apply_M(basis, w, src)
    z = np.abs(est.coeffs - exact) / est.stderr
    ok = bool(np.all(z <= 3.0)) and elapsed < 30.0
    verdict(f"3 stochastic consistency seed {seed}", ok,
            f"max |z| over k=1..8 {z.max():.2f} (<= 3), {elapsed:.1f} s (< 30 s)")


def _a4_problem():
    grid = Grid1D(np.pi, 127)
    op = assemble_operator(grid)
    basis = eigendecompose(op, 8)
    w = NonlocalWeight.indicator(1.0, 0.5, 1.0, direction="backward")
    psi = RandomFieldRep(np.array([1.0, 0.5, -0.25, 0, 0, 0, 0, 0.1]),
                         {(0, 0): DetIntegrand.constant(0.5, 0.0, 0.75)})
    return BackwardProblem(op, basis, w, 0.25), psi


def _max_relative_residual(sol, problem, psi):
    res, samples = condition_residual(sol, problem, psi)
    return float(np.max(np.linalg.norm(res, axis=1) / np.linalg.norm(samples, axis=1)))


def test_4_backward_condition(verdict):
    problem, psi = _a4_problem()
    t0 = time.perf_counter()
    fine = sample_wiener(21, 1000, 1, TimeGrid(1.0, 4000))
    coarse = fine.coarsen(4)
    r_coarse = _max_relative_residual(solve_backward_nonlocal(psi, problem, coarse, keep_paths=False), problem, psi)
    r_fine = _max_relative_residual(solve_backward_nonlocal(psi, problem, fine, keep_paths=False), problem, psi)
    elapsed = time.perf_counter() - t0
    ratio = r_coarse / r_fine
    ok = r_coarse <= 5e-3 and ratio >= 1.8 and elapsed < 60.0
    verdict("4 backward condition", ok,
            f"max rel residual {r_coarse:.2e} at dt=1e-3 (<= 5e-3), ratio to dt/4 {ratio:.2f} (>= 1.8), "
            f"{elapsed:.1f} s (< 60 s)")


def test_5_backward_round_trip(verdict):
    grid = Grid1D(np.pi, 127)
    op = assemble_operator(grid)
    basis = eigendecompose(op, 8)
    w = NonlocalWeight(0.5, [0.0, 0.3, 0.7, 1.0], [1.0, 0.5, 2.0], "backward")
    src = ModeSource([0.0, 0.5, 0.5, 1.0], [np.zeros(8), np.zeros(8), np.linspace(1, -1, 8), np.ones(8)])
    beta = (DetIntegrand.constant(0.3, 0.0, 1.0), DetIntegrand([0.0, 0.6, 1.0], [-0.2, 0.4]))
    problem = BackwardProblem(op, basis, w, 0.2, src, beta)
    g = TimeGrid(1.0, 200)
    wiener = sample_wiener(5, 200, 2, g)
    rng = np.random.default_rng(17)
    A = rng.normal(size=8)
    Yhat = rng.normal(size=(8, 2, 200))
    Yhat[:, :, 160:] = 0.0
    oracle = backward_cauchy(RandomFieldRep.from_steps(A, Yhat, g), problem, wiener)
    psi = condition_map(problem, A, Yhat, g)
    sol = solve_backward_nonlocal(psi, problem, wiener)
    e_A = float(np.max(np.abs(sol.A - A)))
    e_Y = float(np.max(np.abs(sol.Yhat - Yhat)))
    e_alpha = float(np.max(np.abs(sol.alpha - oracle.alpha)))
    ok = max(e_A, e_Y, e_alpha) <= 1e-8
    verdict("5 backward round trip", ok,
            f"mean {e_A:.1e}, integrands {e_Y:.1e}, pathwise alpha {e_alpha:.1e} (all <= 1e-8)")


def test_6_ill_posed_exclusion(verdict):
    lam = np.array([1.0, 4.0, 9.0, 16.0, 25.0])
    V = np.eye(15)[:, :5] / np.sqrt(np.pi / 16)
    basis = SpectralBasis(Grid1D(np.pi, 15), lam, V)
    rep = conditioning_report(basis, NonlocalWeight(1.0, [0.0, 1.0], [0.0]), allow_ill_posed=True)
    inv = np.array([r["inv_m"] for r in rep.tables["conditioning"]])
    e_exp = float(np.max(np.abs(inv / np.exp(lam) - 1)))
    good = np.array([r["inv_m"] for r in conditioning_table(lam, NonlocalWeight.constant(1.0))])
    e_lin = float(np.max(np.abs(good / (lam / (1 - np.exp(-lam))) - 1)))
    ok = e_exp <= 1e-10 and abs(inv[-1] / 7.2e10 - 1) < 1e-3 and e_lin <= 1e-10 and rep["exponential_growth"] == 1.0
    verdict("6 ill-posed exclusion", ok,
            f"1/m vs e^lambda rel {e_exp:.1e}, 1/m at lambda=25 {inv[-1]:.4e}, well-posed vs linear law {e_lin:.1e}")


def test_7_condition_validators(verdict):
    grid = Grid1D(np.pi, 127)
    op = assemble_operator(grid)
    fixtures = [
        (NonlocalWeight.constant(1.0), (), True),
        (NonlocalWeight.indicator(1.0, 0.5, 1.0, direction="backward"), (), True),
        (NonlocalWeight.indicator(1.0, 0.0, 0.5, kappa=1.0), (NoiseTerm.build(grid, beta_bar=lambda x: 0.5 * np.sin(x)),), True),
        (NonlocalWeight(1.0, [0.0, 1.0], [0.0]), (), False),
        (NonlocalWeight(0.0, [0.0, 0.5, 1.0], [1.0, -0.5]), (), False),
        (NonlocalWeight.constant(1.0), (NoiseTerm.build(grid, beta_bar=0.5),), False),
    ]
    got = [check_conditions(op, w, n).valid for w, n, _ in fixtures]
    want = [v for _, _, v in fixtures]
    dh = [superparabolicity_check(op, (NoiseTerm.build(grid, beta_bar=b),))[0] for b in (0.0, 1.0, np.sqrt(2))]
    dh_ok = np.allclose(dh, [1.0, 0.5, 0.0], atol=1e-14, rtol=0)
    ok = got == want and dh_ok
    verdict("7 condition validators", ok, f"classified {got} expected {want}, delta_hat {np.round(dh, 15).tolist()}")


def test_8_determinism(verdict, tmp_path):
    cfg = str(SCEN / "verify_full.json")
    hashes, codes = [], []
    for i, workers in enumerate(("1", "8", "8")):
        out = tmp_path / f"run{i}"
        codes.append(run(["verify", "--config", cfg, "--out", str(out), "--workers", workers]))
        hashes.append((out / "manifest.json").read_bytes())
    files = json.loads(hashes[0])["files"]
    ok = codes == [0, 0, 0] and hashes[0] == hashes[1] == hashes[2]
    verdict("8 determinism", ok, f"exit codes {codes}, manifests identical: {hashes[0] == hashes[1] == hashes[2]} "
                                 f"({len(files)} files)")


def test_9_bsde_order(verdict):
    grid = Grid1D(np.pi, 63)
    op = assemble_operator(grid)
    basis = eigendecompose(op, 1)
    w = NonlocalWeight.indicator(1.0, 0.5, 1.0, direction="backward")
    problem = BackwardProblem(op, basis, w, 0.25, beta=(DetIntegrand.constant(0.3, 0.0, 1.0),))
    psi = RandomFieldRep([1.0], {(0, 0): DetIntegrand([0.0, 0.4, 0.75], [1.0, -0.5])})
    fine = sample_wiener(9, 1000, 1, TimeGrid(1.0, 1600))
    dts, vals = [], []
    for f in (16, 4, 1):
        wn = fine.coarsen(f)
        dts.append(wn.grid.dt)
        vals.append(bsde_residual(solve_backward_nonlocal(psi, problem, wn), problem))
    order = observed_order(dts, vals)
    C = max(v / np.sqrt(d) for v, d in zip(vals, dts))
    ok = order >= 0.4
    verdict("9 BSDE residual order", ok,
            f"residuals {[f'{v:.2e}' for v in vals]} at dt {dts}, observed order {order:.3f} (>= 0.4), "
            f"C = max residual/sqrt(dt) = {C:.3f}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
