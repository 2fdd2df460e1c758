"""Command-line front end: ``nonlocal-spde <subcommand> --config scenario.json``.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 a verify check
failed.  Every run writes ``manifest.json`` listing the output files with
their SHA-256 digests.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .backward import (
    backward_cauchy,
    condition_map,
    condition_residual,
    solve_backward_nonlocal,
)
from .config import Scenario, build_backward, build_forward, load_scenario
from .errors import NonlocalSPDEError, SolverError, TailTooLarge, ValidationError
from .forward import apply_M, apply_M0, recover_initial, recover_modes, simulate_forward, solve_forward_nonlocal
from .report import ResidualReport
from .spectral import lift, write_basis_csv
from .stochastic import TimeGrid, WienerEnsemble, sample_wiener
from .verification import (
    backward_integral_residual,
    backward_restart_check,
    bsde_residual,
    check_conditions,
    conditioning_report,
    forward_integral_residual,
    forward_restart_check,
    observed_order,
)

OUT_ENV = "NONLOCAL_SPDE_OUT"
SUBCOMMANDS = ("eig", "forward-recover", "forward-solve", "backward-solve", "roundtrip", "conditioning", "verify")
CHECK_PATHS = 32
NEGLIGIBLE = 1e-13


def _fmt(v) -> str:
    return repr(float(v))


class Writer:
    """Collects output files so the manifest lists exactly what was written."""

    def __init__(self, out_dir: Path):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def csv(self, name: str, header, rows) -> Path:
        path = self.out / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        self.files.append(path)
        return path

    def report(self, rep: ResidualReport, name: str = "report.csv") -> Path:
        path = rep.write_csv(self.out / name)
        self.files.append(path)
        return path

    def add(self, paths) -> None:
        self.files.extend(Path(p) for p in paths)

    def manifest(self, subcommand: str, scenario: Scenario, status: str) -> Path:
        entries = []
        for p in sorted(set(self.files), key=lambda q: q.name):
            data = p.read_bytes()
            entries.append({"file": p.name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        doc = {"subcommand": subcommand, "seed": scenario.mc.seed, "status": status, "files": entries}
        path = self.out / "manifest.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _write_field(wr: Writer, name: str, grid, values) -> None:
    wr.csv(name, ["node", "x", "value"],
           ([i + 1, _fmt(x), _fmt(v)] for i, (x, v) in enumerate(zip(grid.nodes, values))))


def _write_mean_field(wr: Writer, s: Scenario, knots, coeffs) -> None:
    stride = s.output.stride
    fields = lift(coeffs[::stride], s.basis)
    ts = knots[::stride]
    nodes = np.arange(1, s.grid.n_x + 1)
    rows = ([_fmt(t), int(n), _fmt(v)] for t, u in zip(ts, fields) for n, v in zip(nodes, u))
    wr.csv("mean_field.csv", ["t", "node", "value"], rows)


def _wiener(s: Scenario, N: int, grid=None) -> WienerEnsemble:
    grid = s.require_time() if grid is None else grid
    return sample_wiener(s.mc.seed, s.mc.paths, max(N, 1), grid, s.mc.workers)


# ---------------------------------------------------------------- subcommands

def cmd_eig(s: Scenario, wr: Writer) -> ResidualReport:
    basis = s.basis
    wr.add(write_basis_csv(basis, wr.out))
    rep = ResidualReport()
    rel = basis.eigen_residuals(s.operator) / np.maximum(np.abs(basis.eigenvalues), 1.0)
    rep.add("gram_deviation", basis.gram_deviation(), s.tolerances.gram)
    rep.add("eigen_residual_rel_max", float(np.max(rel)), s.tolerances.eigen_residual)
    rep.add("lambda_1", float(basis.eigenvalues[0]), units="after shift")
    rep.add("shift", basis.shift)
    return rep


def cmd_forward_recover(s: Scenario, wr: Writer) -> ResidualReport:
    setup = build_forward(s)
    p = setup.problem
    rec = recover_initial(setup.mu, p.source, p.basis, p.weight, s.allow_ill_posed, s.tolerances.tail_fraction)
    _write_field(wr, "xi.csv", s.grid, lift(rec.xi, p.basis))
    rep = ResidualReport()
    rep.add("max_amplification", float(np.max(rec.amplification)), units="1/m_k")
    rep.add("truncation_tail", rec.tail, units="h-l2 of mu")
    rep.add("ill_posed", float(rec.ill_posed))
    if setup.xi_target is not None:
        err = np.linalg.norm(rec.xi - setup.xi_target)
        size = np.linalg.norm(setup.xi_target)
        rep.add("xi_error_rel", err / size if size > 0 else err, s.tolerances.recovery)
    return rep


def _trajectory_rows_forward(y, knots, n_paths, stride):
    for p in range(min(n_paths, y.shape[0])):
        for j in range(0, y.shape[1], stride):
            for k in range(y.shape[2]):
                yield [p, _fmt(knots[j]), k + 1, _fmt(y[p, j, k])]


def cmd_forward_solve(s: Scenario, wr: Writer) -> ResidualReport:
    setup = build_forward(s)
    p = setup.problem
    wiener = _wiener(s, p.N)
    sol = solve_forward_nonlocal(setup.mu, p, wiener, s.allow_ill_posed, s.mc.workers, keep_paths=False,
                                 tail_fraction=s.tolerances.tail_fraction)
    _write_field(wr, "xi.csv", s.grid, lift(sol.xi, p.basis))
    _write_mean_field(wr, s, wiener.grid.knots, sol.ensemble.mean)
    n_show = s.output.trajectory_paths
    if n_show > 0:
        sub = WienerEnsemble(wiener.grid, wiener.dw[:n_show], wiener.seed)
        ens = simulate_forward(p, sol.xi, sub, 1, keep_paths=True)
        wr.csv("trajectories.csv", ["path", "t", "k", "y"],
               _trajectory_rows_forward(ens.y, wiener.grid.knots, n_show, s.output.stride))
    if "recovery_max_z" in sol.report:
        sol.report.metrics["recovery_max_z"].tolerance = s.tolerances.mc_z
    return sol.report


def _write_backward(wr: Writer, s: Scenario, sol, res, samples) -> None:
    abs_res = np.linalg.norm(res, axis=1)
    size = np.linalg.norm(samples, axis=1)
    rel = np.where(size > 0, abs_res / np.where(size > 0, size, 1.0), abs_res)
    wr.csv("condition_residual.csv", ["path", "abs", "rel"],
           ([p, _fmt(a), _fmt(r)] for p, (a, r) in enumerate(zip(abs_res, rel))))
    n_show = min(s.output.trajectory_paths, sol.P)
    if n_show > 0:
        y = sol.trajectories(slice(0, n_show))
        N = sol.upsilon.shape[0]
        knots = sol.grid.knots

        def rows():
            for p in range(n_show):
                for j in range(0, sol.grid.M + 1, s.output.stride):
                    for k in range(sol.K):
                        yield [p, _fmt(knots[j]), k + 1, _fmt(y[p, j, k])] + [
                            _fmt(sol.upsilon[d, j, k]) for d in range(N)]

        wr.csv("trajectories.csv", ["path", "t", "k", "y"] + [f"upsilon_{d + 1}" for d in range(N)], rows())
    _write_field(wr, "u0.csv", s.grid, lift(sol.initial(), s.basis))


def cmd_backward_solve(s: Scenario, wr: Writer) -> ResidualReport:
    setup = build_backward(s)
    p = setup.problem
    wiener = _wiener(s, p.n_components(setup.psi))
    sol = solve_backward_nonlocal(setup.psi, p, wiener, s.allow_ill_posed, keep_paths=False, workers=s.mc.workers)
    res, samples = condition_residual(sol, p, setup.psi)
    _write_backward(wr, s, sol, res, samples)
    sol.report.metrics["condition_residual_max"].tolerance = s.tolerances.condition_residual
    return sol.report


def _roundtrip(s: Scenario, setup, wiener) -> tuple[ResidualReport, object]:
    p = setup.problem
    alpha = setup.alpha
    if alpha is None:
        raise ValidationError("roundtrip needs a 'roundtrip': {'alpha': ...} block")
    gen = backward_cauchy(alpha, p, wiener, keep_paths=False, workers=s.mc.workers)
    psi = condition_map(p, gen.A, gen.Yhat, wiener.grid)
    sol = solve_backward_nonlocal(psi, p, wiener, s.allow_ill_posed, keep_paths=False, workers=s.mc.workers)
    tol = s.tolerances.round_trip
    rep = ResidualReport()
    rep.add("roundtrip_mean_level", float(np.max(np.abs(sol.A - gen.A))), tol)
    rep.add("roundtrip_integrand", float(np.max(np.abs(sol.Yhat - gen.Yhat))), tol)
    rep.add("roundtrip_alpha", float(np.max(np.abs(sol.alpha - gen.alpha))), tol)
    rep.merge(sol.report, prefix="solve_")
    return rep, (sol, psi)


def cmd_roundtrip(s: Scenario, wr: Writer) -> ResidualReport:
    setup = build_backward(s)
    wiener = _wiener(s, setup.problem.n_components(setup.alpha or setup.psi))
    rep, (sol, psi) = _roundtrip(s, setup, wiener)
    res, samples = condition_residual(sol, setup.problem, psi)
    _write_backward(wr, s, sol, res, samples)
    return rep


def cmd_conditioning(s: Scenario, wr: Writer) -> ResidualReport:
    direction = s.raw.get("weight", {}).get("direction", "forward")
    rep = conditioning_report(s.basis, s.weight(direction), s.allow_ill_posed)
    rows = rep.tables["conditioning"]
    wr.csv("conditioning.csv", ["k", "lambda", "m", "inv_m", "q0"],
           ([r["k"], _fmt(r["lambda"]), _fmt(r["m"]), _fmt(r["inv_m"]), _fmt(r["q0"])] for r in rows))
    return rep


def run_verify_suite(s: Scenario) -> ResidualReport:
    """All configured invariant checks with the scenario tolerances."""
    tol = s.tolerances
    rep = ResidualReport()
    basis = s.basis
    rel = basis.eigen_residuals(s.operator) / np.maximum(np.abs(basis.eigenvalues), 1.0)
    rep.add("gram_deviation", basis.gram_deviation(), tol.gram)
    rep.add("eigen_residual_rel_max", float(np.max(rel)), tol.eigen_residual)

    if "forward" in s.raw:
        rep.merge(_verify_forward(s), prefix="forward_")
    if "backward" in s.raw:
        rep.merge(_verify_backward(s), prefix="backward_")
    return rep


def _verify_forward(s: Scenario) -> ResidualReport:
    tol = s.tolerances
    setup = build_forward(s)
    p = setup.problem
    rep = ResidualReport()
    cond = check_conditions(s.operator, p.weight, p.noise, p.delta)
    rep.add("conditions_valid", float(cond.valid), 1.0, sense="ge")
    rep.add("superparabolicity_margin", cond.margin, max(tol.delta, 0.0), sense="ge")

    rec = recover_initial(setup.mu, p.source, p.basis, p.weight, s.allow_ill_posed, tol.tail_fraction)
    xi_star = rec.xi if setup.xi_target is None else setup.xi_target
    mu2 = apply_M0(p.basis, p.weight, xi_star) + apply_M(p.basis, p.weight, p.source)
    back = recover_modes(mu2, p.source, p.basis, p.weight, s.allow_ill_posed).xi
    size = np.linalg.norm(xi_star)
    err = np.linalg.norm(back - xi_star)
    rep.add("recovery_round_trip", err / size if size > 0 else err, tol.recovery)

    wiener = _wiener(s, p.N)
    sol = solve_forward_nonlocal(setup.mu, p, wiener, s.allow_ill_posed, s.mc.workers, keep_paths=False,
                                 tail_fraction=tol.tail_fraction)
    if "recovery_max_z" in sol.report:
        sol.report.metrics["recovery_max_z"].tolerance = tol.mc_z
    rep.merge(sol.report, prefix="solve_")

    sub = WienerEnsemble(wiener.grid, wiener.dw[:CHECK_PATHS], wiener.seed)
    ens = simulate_forward(p, sol.xi, sub, 1, keep_paths=True)
    rep.add("integral_residual", forward_integral_residual(ens), tol.forward_integral)
    tau = wiener.grid.knots[wiener.grid.M // 2]
    rep.add("restart", forward_restart_check(p, sol.xi, sub, tau), tol.restart)
    return rep


def _verify_backward(s: Scenario) -> ResidualReport:
    tol = s.tolerances
    setup = build_backward(s)
    p = setup.problem
    rep = ResidualReport()
    cond = check_conditions(s.operator, p.weight, (), tol.delta)
    rep.add("conditions_valid", float(cond.valid), 1.0, sense="ge")

    grid = s.require_time()
    N = p.n_components(setup.psi)
    fine = _wiener(s, N, TimeGrid(grid.T, 4 * grid.M))
    coarse = fine.coarsen(4)
    sol = solve_backward_nonlocal(setup.psi, p, coarse, s.allow_ill_posed, keep_paths=False, workers=s.mc.workers)
    sol.report.metrics["condition_residual_max"].tolerance = tol.condition_residual
    rep.merge(sol.report, prefix="solve_")
    sol_f = solve_backward_nonlocal(setup.psi, p, fine, s.allow_ill_posed, keep_paths=False, workers=s.mc.workers)
    r_c, r_f = sol.report["condition_residual_mean"], sol_f.report["condition_residual_mean"]
    if r_c > NEGLIGIBLE:
        rep.add("condition_residual_ratio", r_c / max(r_f, 1e-300), tol.residual_ratio, sense="ge")

    sub = WienerEnsemble(coarse.grid, coarse.dw[:CHECK_PATHS], coarse.seed)
    sub_f = WienerEnsemble(fine.grid, fine.dw[:CHECK_PATHS], fine.seed)
    small = solve_backward_nonlocal(setup.psi, p, sub, s.allow_ill_posed, keep_paths=True)
    small_f = solve_backward_nonlocal(setup.psi, p, sub_f, s.allow_ill_posed, keep_paths=True)
    rep.add("integral_residual", backward_integral_residual(small, p), tol.backward_integral)
    tau = grid.knots[grid.M // 2]
    rep.add("restart", backward_restart_check(small, p, tau), tol.restart)
    b_c, b_f = bsde_residual(small, p), bsde_residual(small_f, p)
    rep.add("bsde_residual", b_c, units="sample-L2 of max_n |R_n|")
    if b_c > NEGLIGIBLE and b_f > NEGLIGIBLE:
        rep.add("bsde_order", observed_order([grid.dt, fine.grid.dt], [b_c, b_f]), tol.bsde_order, sense="ge")

    psi_rt = condition_map(p, small.A, small.Yhat, sub.grid)
    again = solve_backward_nonlocal(psi_rt, p, sub, s.allow_ill_posed, keep_paths=False)
    rep.add("roundtrip_mean_level", float(np.max(np.abs(again.A - small.A))), tol.round_trip)
    rep.add("roundtrip_integrand", float(np.max(np.abs(again.Yhat - small.Yhat))), tol.round_trip)
    rep.add("roundtrip_alpha", float(np.max(np.abs(again.alpha - small.alpha))), tol.round_trip)
    return rep


def cmd_verify(s: Scenario, wr: Writer) -> ResidualReport:
    return run_verify_suite(s)


COMMANDS = {
    "eig": cmd_eig,
    "forward-recover": cmd_forward_recover,
    "forward-solve": cmd_forward_solve,
    "backward-solve": cmd_backward_solve,
    "roundtrip": cmd_roundtrip,
    "conditioning": cmd_conditioning,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nonlocal-spde",
                                 description="Forward and backward SPDEs with non-local time-averaged conditions.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON scenario file")
    ap.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV} or ./out)")
    ap.add_argument("--allow-ill-posed", action="store_true", help="accept weights that violate the well-posedness requirements")
    ap.add_argument("--workers", type=int, default=None, help="threads for path-parallel loops")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out or os.environ.get(OUT_ENV) or "out")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", TailTooLarge)
            scenario = load_scenario(args.config, args.workers, args.allow_ill_posed or None)
            wr = Writer(out)
            rep = COMMANDS[args.subcommand](scenario, wr)
            wr.report(rep)
            failed = rep.failures()
            status = "ok" if not failed else "failed"
            wr.manifest(args.subcommand, scenario, status)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except NonlocalSPDEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    if failed:
        if args.subcommand == "verify":
            print("checks failed: " + ", ".join(failed), file=sys.stderr)
            return 4
        print("warning: metrics outside tolerance: " + ", ".join(failed), file=sys.stderr)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
