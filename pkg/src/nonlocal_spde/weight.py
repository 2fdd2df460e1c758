"""The averaging functional ``kappa u(T or 0) + int_0^T rho(t) u(t) dt``.

``rho`` is piecewise constant on ``[0, T]`` so that every integral of ``rho``
against an exponential is available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadTime, DegenerateMultiplier, IllPosedWeight, ShapeMismatch
from .expint import phi

DIRECTIONS = ("forward", "backward")


@dataclass(frozen=True, eq=False)
class NonlocalWeight:
    kappa: float
    breakpoints: np.ndarray
    values: np.ndarray
    direction: str = "forward"

    def __post_init__(self):
        bp = np.atleast_1d(np.asarray(self.breakpoints, dtype=float))
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        if bp.ndim != 1 or bp.size < 1 or vals.size != bp.size - 1:
            raise ShapeMismatch("rho needs m+1 breakpoints and m values")
        if bp[0] != 0.0:
            raise ShapeMismatch("rho breakpoints must start at t=0")
        if np.any(np.diff(bp) < 0):
            raise ShapeMismatch("rho breakpoints must be non-decreasing")
        if not (np.all(np.isfinite(bp)) and np.all(np.isfinite(vals)) and np.isfinite(self.kappa)):
            raise ShapeMismatch("weight data must be finite")
        if self.direction not in DIRECTIONS:
            raise ShapeMismatch(f"direction must be one of {DIRECTIONS}")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def T(self) -> float:
        return float(self.breakpoints[-1])

    @classmethod
    def constant(cls, T: float, value: float = 1.0, kappa: float = 0.0, direction: str = "forward"):
        if T == 0:
            return cls(kappa, [0.0], [], direction)
        return cls(kappa, [0.0, T], [value], direction)

    @classmethod
    def indicator(cls, T: float, start: float, end: float, value: float = 1.0, kappa: float = 0.0,
                  direction: str = "forward"):
        bp = sorted({0.0, start, end, T})
        vals = [value if start <= 0.5 * (a + b) < end else 0.0 for a, b in zip(bp[:-1], bp[1:])]
        return cls(kappa, bp, vals, direction)

    def pieces(self):
        """Non-empty pieces as ``(t0, t1, value)``."""
        bp = self.breakpoints
        for t0, t1, v in zip(bp[:-1], bp[1:], self.values):
            if t1 > t0:
                yield float(t0), float(t1), float(v)

    def rho_at(self, t: float) -> float:
        for t0, t1, v in self.pieces():
            if t0 <= t < t1:
                return v
        return 0.0

    def is_zero(self) -> bool:
        return not any(v != 0.0 for _, _, v in self.pieces())

    def to_json(self) -> dict:
        return {
            "kappa": self.kappa,
            "rho": {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()},
            "T": self.T,
            "direction": self.direction,
        }

    @classmethod
    def from_json(cls, data: dict, direction: str | None = None) -> "NonlocalWeight":
        rho = data.get("rho", {})
        T = float(data["T"])
        if isinstance(rho, (int, float)):
            w = cls.constant(T, float(rho), data.get("kappa", 0.0), direction or data.get("direction", "forward"))
            return w
        w = cls(data.get("kappa", 0.0), rho["breakpoints"], rho["values"],
                direction or data.get("direction", "forward"))
        if abs(w.T - T) > 1e-12 * max(1.0, T):
            raise ShapeMismatch(f"rho breakpoints end at {w.T}, but T = {T}")
        return w


@dataclass
class WeightReport:
    nonnegative: bool
    window_ok: bool
    T1: float | None
    witness: tuple[float, float] | None
    rho_floor: float
    continuous_at_T: bool
    ill_posed: bool
    messages: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.nonnegative and self.window_ok and self.continuous_at_T and not self.ill_posed

    def require(self, allow_ill_posed: bool = False) -> None:
        """Raise :class:`IllPosedWeight` unless valid (or overridden)."""
        if self.valid:
            return
        if allow_ill_posed and self.nonnegative:
            return
        raise IllPosedWeight("; ".join(self.messages) or "invalid weight")


def validate(w: NonlocalWeight) -> WeightReport:
    """Check sign, positivity-window and continuity requirements on ``(kappa, rho)``."""
    msgs = []
    nonneg = w.kappa >= 0 and all(v >= 0 for _, _, v in w.pieces())
    if not nonneg:
        msgs.append("weight sign condition violated: need rho(t) >= 0 a.e. and kappa >= 0")

    pieces = list(w.pieces())
    ill_posed = w.is_zero()
    if ill_posed:
        if w.kappa != 0:
            msgs.append("rho == 0 with kappa != 0 is the ill-posed Cauchy case (pure terminal/initial condition)")
        else:
            msgs.append("rho == 0 and kappa == 0: the averaging functional vanishes")

    T1, witness, floor = None, None, 0.0
    if w.direction == "forward":
        run = []
        for p in pieces:
            if p[2] > 0:
                run.append(p)
            else:
                break
        if run:
            T1 = run[-1][1]
            witness = (0.0, T1)
            floor = min(p[2] for p in run)
        elif not ill_posed:
            msgs.append("forward problem needs ess inf of rho > 0 on some [0, T1], T1 > 0")
        continuous = True
    else:
        run = []
        for p in reversed(pieces):
            if p[2] > 0:
                run.append(p)
            else:
                break
        if run:
            T1 = run[-1][0]
            witness = (T1, w.T)
            floor = min(p[2] for p in run)
        elif not ill_posed:
            msgs.append("backward problem needs ess inf of rho > 0 on some [T1, T], T1 < T")
        # a piecewise-constant rho is continuous from the left at T by construction
        continuous = True
    return WeightReport(nonneg, T1 is not None, T1, witness, floor, continuous, ill_posed, msgs)


def _piece_integral(rate, t0, t1, anchor):
    """``int_{t0}^{t1} e^{-rate (anchor - t)} dt``."""
    tau = t1 - t0
    return np.exp(-rate * (anchor - t1)) * tau * phi(1, -rate * tau)


def q_factor(w: NonlocalWeight, lam, s: float):
    """``int_s^T rho(t) e^{-lam (T - t)} dt``, exact piece by piece."""
    if not (0.0 <= s <= w.T):
        raise BadTime(f"s = {s} outside [0, {w.T}]")
    lam = np.asarray(lam, dtype=float)
    total = np.zeros_like(lam)
    for t0, t1, v in w.pieces():
        a = max(t0, s)
        if t1 <= a or v == 0.0:
            continue
        total = total + v * _piece_integral(lam, a, t1, w.T)
    return total


def q_on_grid(w: NonlocalWeight, lam, knots) -> np.ndarray:
    """``q_factor`` at each knot; shape ``knots.shape + lam.shape``."""
    return np.array([q_factor(w, lam, float(s)) for s in knots])


def forward_multiplier(w: NonlocalWeight, lam):
    """``kappa e^{-lam T} + int_0^T rho(t) e^{-lam t} dt``."""
    lam = np.asarray(lam, dtype=float)
    total = w.kappa * np.exp(-lam * w.T)
    for t0, t1, v in w.pieces():
        if v == 0.0:
            continue
        # int_{t0}^{t1} e^{-lam t} dt = e^{-lam t0} tau phi1(-lam tau)
        tau = t1 - t0
        total = total + v * np.exp(-lam * t0) * tau * phi(1, -lam * tau)
    if np.any(total == 0) and not (w.kappa == 0 and w.is_zero()):
        raise DegenerateMultiplier("spectral multiplier underflowed to zero")
    return total


def backward_denominator(w: NonlocalWeight, lam):
    """``q(0) + kappa e^{-lam T}``: the factor linking the terminal mean to ``E psi``."""
    lam = np.asarray(lam, dtype=float)
    return q_factor(w, lam, 0.0) + w.kappa * np.exp(-lam * w.T)


def q_lower_bound(w: NonlocalWeight, lam, s: float, report: WeightReport | None = None):
    """``floor * (1 - e^{-lam (T - max(T1, s))}) / lam`` for the backward direction.

    ``floor`` is the essential infimum of ``rho`` on ``[T1, T]``.
    """
    report = report or validate(w)
    lam = np.asarray(lam, dtype=float)
    if report.T1 is None or w.direction != "backward":
        return np.zeros_like(lam)
    tau = w.T - max(report.T1, s)
    if tau <= 0:
        return np.zeros_like(lam)
    return report.rho_floor * tau * phi(1, -lam * tau)
