"""JSON scenario files.

A scenario describes the grid, operator, weight, time grid, Monte Carlo
settings and the data of one problem.  Spatial functions are given as a
number, a table ``{"x": [...], "value": [...]}``, a sine series
``{"sine": [[n, amp], ...]}`` (``sum amp sin(n pi x / L)``) or, where mode
shapes make sense, ``{"mode": k}`` for the k-th discrete eigenvector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
import numpy as np

from .backward import BackwardProblem, RandomFieldRep
from .errors import ShapeMismatch, UnsupportedNoise, ValidationError
from .expint import ModeSource
from .forward import ForwardProblem, NoiseTerm, apply_M, apply_M0
from .spectral import EllipticOperator, Grid1D, coefficient, SpectralBasis, assemble_operator, eigendecompose, lift, project
from .stochastic import DetIntegrand, TimeGrid
from .verification import Tolerances
from .weight import NonlocalWeight


class ScenarioError(ValidationError):
    """Malformed or inconsistent scenario file."""


@dataclass
class MCConfig:
    paths: int = 1000
    seed: int = 0
    workers: int = 1


@dataclass
class OutputConfig:
    trajectory_paths: int = 3
    stride: int = 1


@dataclass
class Scenario:
    raw: dict
    grid: Grid1D
    operator: EllipticOperator
    K: int
    time: TimeGrid | None
    mc: MCConfig
    tolerances: Tolerances
    output: OutputConfig
    allow_ill_posed: bool = False
    _basis: SpectralBasis | None = field(default=None, repr=False)

    @property
    def basis(self) -> SpectralBasis:
        if self._basis is None:
            self._basis = eigendecompose(self.operator, self.K)
        return self._basis

    def weight(self, direction: str | None = None, block: dict | None = None) -> NonlocalWeight:
        """The problem block's own ``weight`` if present, else the top-level one."""
        data = (block or {}).get("weight", self.raw.get("weight"))
        if data is None:
            raise ScenarioError("scenario has no 'weight' block")
        return NonlocalWeight.from_json(data, direction)

    def require_time(self) -> TimeGrid:
        if self.time is None:
            raise ScenarioError("scenario has no 'time' block")
        return self.time


def _spatial(spec, grid: Grid1D, basis_fn=None):
    """Nodal values or a coefficient spec accepted by :func:`coefficient`."""
    if isinstance(spec, dict) and "sine" in spec:
        terms = [(float(n), float(a)) for n, a in spec["sine"]]
        L = grid.L
        return lambda x: sum(a * np.sin(n * np.pi * np.asarray(x) / L) for n, a in terms)
    if isinstance(spec, dict) and "mode" in spec:
        if basis_fn is None:
            raise ScenarioError("'mode' shapes are not allowed for this coefficient")
        k = int(spec["mode"])
        basis = basis_fn()
        if not 1 <= k <= basis.K:
            raise ScenarioError(f"mode {k} outside 1..{basis.K}")
        return basis.vectors[:, k - 1].copy()
    return spec


def _nodal_field(spec, grid: Grid1D, basis_fn) -> np.ndarray:
    s = _spatial(spec, grid, basis_fn)
    if isinstance(s, np.ndarray):
        return s
    return np.asarray(coefficient(s)(grid.nodes), dtype=float)


def load_scenario(path, workers: int | None = None, allow_ill_posed: bool | None = None) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc
    return parse_scenario(raw, workers, allow_ill_posed)


def parse_scenario(raw: dict, workers: int | None = None, allow_ill_posed: bool | None = None) -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a JSON object")
    try:
        g = raw["grid"]
        grid = Grid1D(float(g.get("L", np.pi)), int(g["n_x"]))
        opd = raw.get("operator", {})
        op = assemble_operator(
            grid,
            _spatial(opd.get("a", 1.0), grid),
            _spatial(opd.get("a0", 0.0), grid),
            opd.get("shift", 0.0),
            float(opd.get("delta_a", 0.0)),
        )
        K = int(raw.get("modes", 8))
        t = raw.get("time")
        time = None
        if t is not None:
            T = float(t.get("T", raw.get("weight", {}).get("T", 1.0)))
            time = TimeGrid(T, int(t["M"]))
        m = raw.get("mc", {})
        mc = MCConfig(int(m.get("paths", 1000)), int(m.get("seed", 0)), int(m.get("workers", 1)))
        if workers is not None:
            mc.workers = int(workers)
        o = raw.get("output", {})
        out = OutputConfig(int(o.get("trajectory_paths", 3)), int(o.get("stride", 1)))
        if out.stride < 1:
            raise ScenarioError("output stride must be >= 1")
        tol = Tolerances.from_json(raw.get("tolerances"))
    except KeyError as exc:
        raise ScenarioError(f"missing required key {exc}") from exc
    except (TypeError, AttributeError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc
    allow = bool(raw.get("allow_ill_posed", False)) if allow_ill_posed is None else (
        allow_ill_posed or bool(raw.get("allow_ill_posed", False)))
    return Scenario(raw, grid, op, K, time, mc, tol, out, allow)


def mode_source(data, T: float, K: int) -> ModeSource:
    """``{"times": [...], "modes": [[f_1..f_K], ...]}``; rows may be shorter than ``K``."""
    if data is None:
        return ModeSource.zero(T, K)
    times = np.asarray(data["times"], dtype=float)
    rows = data["modes"]
    vals = np.zeros((times.size, K))
    for i, r in enumerate(rows):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if r.size > K:
            raise ShapeMismatch(f"source row {i} has {r.size} entries for {K} modes")
        vals[i, : r.size] = r
    return ModeSource(times, vals)


def _integrand(data) -> DetIntegrand:
    return DetIntegrand(data["breakpoints"], data["values"])


@dataclass
class ForwardSetup:
    problem: ForwardProblem
    mu: np.ndarray  # nodal field
    xi_target: np.ndarray | None  # when the scenario prescribes xi instead of mu


def build_forward(s: Scenario) -> ForwardSetup:
    try:
        f = s.raw["forward"]
        w = s.weight("forward", f)
        basis = s.basis
        src = mode_source(f.get("source"), w.T, s.K)
        noise = []
        for n in f.get("noise", []):
            prof = _integrand(n["h_profile"]) if "h_profile" in n else None
            noise.append(NoiseTerm.build(
                s.grid,
                _spatial(n.get("beta_bar", 0.0), s.grid),
                _nodal_field(n.get("beta", 0.0), s.grid, None),
                _nodal_field(n.get("h", 0.0), s.grid, lambda: basis),
                prof,
            ))
        fluct = {}
        for e in f.get("fluctuation", []):
            fluct[(int(e["k"]) - 1, int(e["d"]) - 1)] = _integrand(e)
        problem = ForwardProblem(s.operator, basis, w, src, tuple(noise), fluct, f.get("theta"),
                                 float(f.get("delta", s.tolerances.delta)))
        xi_target = None
        if "mu" in f:
            mu = _nodal_field(f["mu"], s.grid, lambda: basis)
        elif "xi" in f:
            xi_field = _nodal_field(f["xi"], s.grid, lambda: basis)
            xi_target = project(xi_field, basis)
            mu = lift(apply_M0(basis, w, xi_target) + apply_M(basis, w, src), basis)
        else:
            mu = np.zeros(s.grid.n_x)
    except KeyError as exc:
        raise ScenarioError(f"missing required key {exc} in the forward block") from exc
    except (TypeError, AttributeError) as exc:
        raise ScenarioError(f"malformed forward block: {exc}") from exc
    return ForwardSetup(problem, mu, xi_target)


@dataclass
class BackwardSetup:
    problem: BackwardProblem
    psi: RandomFieldRep
    alpha: RandomFieldRep | None


def build_backward(s: Scenario) -> BackwardSetup:
    try:
        b = s.raw["backward"]
        w = s.weight("backward", b)
        if b.get("beta_bar", 0.0) not in (0, 0.0, None):
            raise UnsupportedNoise("gradient noise is not supported in the backward problem")
        beta = tuple(_integrand(x) for x in b.get("beta", []))
        src = mode_source(b.get("source"), w.T, s.K)
        problem = BackwardProblem(s.operator, s.basis, w, float(b["eps"]), src, beta, b.get("theta"))
        psi = RandomFieldRep.from_json(b.get("psi", {}), s.K)
        alpha_data = s.raw.get("roundtrip", {}).get("alpha")
        alpha = RandomFieldRep.from_json(alpha_data, s.K) if alpha_data is not None else None
    except KeyError as exc:
        raise ScenarioError(f"missing required key {exc} in the backward block") from exc
    except (TypeError, AttributeError) as exc:
        raise ScenarioError(f"malformed backward block: {exc}") from exc
    return BackwardSetup(problem, psi, alpha)
