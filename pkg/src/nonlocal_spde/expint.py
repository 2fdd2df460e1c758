"""Exponential-integrator building blocks.

``phi(k, z)`` are the functions ``phi_0 = e^z``, ``phi_{k+1}(z) = (phi_k(z) - 1/k!) / z``.
They give closed forms for integrals of ``e^{-lambda t}`` against polynomials,
which is all the solvers need because every time profile is piecewise
constant or piecewise linear.

``ModeSource`` is a piecewise-linear-in-time table of mode coefficients and
``propagate_segment`` advances ``y' = -lambda y + f(t)`` exactly across an
interval, also returning the exact weighted time integral of the solution.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .errors import ShapeMismatch

_SERIES_RADIUS = 1.0
_SERIES_TERMS = 30


def phi(k: int, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < _SERIES_RADIUS
    if np.any(small):
        zs = z[small]
        acc = np.zeros_like(zs)
        for n in range(_SERIES_TERMS - 1, -1, -1):
            acc = acc * zs + 1.0 / factorial(n + k)
        out[small] = acc
    big = ~small
    if np.any(big):
        zb = z[big]
        val = np.exp(zb)
        for j in range(k):
            val = (val - 1.0 / factorial(j)) / zb
        out[big] = val
    return out


@dataclass(frozen=True, eq=False)
class ModeSource:
    """Piecewise-linear mode table ``f_k(t)``.

    ``times`` is non-decreasing; a repeated time marks a jump (left and right
    values).  Outside ``[times[0], times[-1]]`` the source is zero.
    """

    times: np.ndarray
    values: np.ndarray  # (n_times, K)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if t.ndim != 1 or v.shape[0] != t.size or t.size < 2:
            raise ShapeMismatch("source needs >= 2 times and one row of mode values per time")
        if np.any(np.diff(t) < 0):
            raise ShapeMismatch("source times must be non-decreasing")
        if np.any(np.sum(t[:, None] == t[None, :], axis=1) > 2):
            raise ShapeMismatch("a source time may appear at most twice (one jump)")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def K(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zero(cls, T: float, K: int) -> "ModeSource":
        return cls(np.array([0.0, T]), np.zeros((2, K)))

    @classmethod
    def constant(cls, T: float, coeffs) -> "ModeSource":
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        return cls(np.array([0.0, T]), np.vstack([c, c]))

    def jump_times(self) -> np.ndarray:
        t = self.times
        return t[1:][np.diff(t) == 0]

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def __call__(self, t: float) -> np.ndarray:
        """Right-continuous evaluation at a single time."""
        t = float(t)
        times = self.times
        if t < times[0] or t > times[-1]:
            return np.zeros(self.K)
        j = int(np.searchsorted(times, t, side="right")) - 1
        if j >= times.size - 1:
            return self.values[-1].copy()
        t0, t1 = times[j], times[j + 1]
        w = (t - t0) / (t1 - t0)
        return (1 - w) * self.values[j] + w * self.values[j + 1]

    def segments(self, a: float, b: float):
        """Yield ``(t0, t1, f0, f1)`` linear pieces covering ``[a, b]``."""
        times = self.times
        cuts = [a]
        cuts.extend(float(x) for x in times if a < x < b)
        cuts.append(b)
        cuts = sorted(set(cuts))
        for t0, t1 in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (t0 + t1)
            j = int(np.searchsorted(times, mid, side="right")) - 1
            if j < 0 or j >= times.size - 1 or mid > times[-1]:
                yield t0, t1, np.zeros(self.K), np.zeros(self.K)
                continue
            s0, s1 = times[j], times[j + 1]
            v0, v1 = self.values[j], self.values[j + 1]
            w0, w1 = (t0 - s0) / (s1 - s0), (t1 - s0) / (s1 - s0)
            yield t0, t1, (1 - w0) * v0 + w0 * v1, (1 - w1) * v0 + w1 * v1

    def reversed(self, T: float) -> "ModeSource":
        """The source ``f(T - s)`` as a function of ``s``."""
        return ModeSource(T - self.times[::-1], self.values[::-1].copy())

    def restricted(self, a: float, b: float) -> "ModeSource":
        pieces = list(self.segments(a, b))
        times = [pieces[0][0]]
        vals = [pieces[0][2]]
        for t0, t1, f0, f1 in pieces:
            if not np.array_equal(f0, vals[-1]):
                times.append(t0)
                vals.append(f0)
            times.append(t1)
            vals.append(f1)
        return ModeSource(np.array(times), np.array(vals))

    def shifted(self, offset: float) -> "ModeSource":
        return ModeSource(self.times + offset, self.values.copy())


def propagate_segment(rates, tau: float, y0, f0, f1, rho: float = 0.0):
    """Exact solution of ``y' = -rate * y + f`` over length ``tau``.

    ``f`` is linear from ``f0`` to ``f1``.  Returns ``(y1, integral)`` with
    ``integral = rho * int_0^tau y(s) ds``.
    """
    z = -np.asarray(rates, dtype=float) * tau
    p1, p2 = phi(1, z), phi(2, z)
    df = f1 - f0
    y1 = np.exp(z) * y0 + tau * (p1 * f0 + p2 * df)
    if rho == 0.0:
        return y1, np.zeros_like(y1)
    p3 = phi(3, z)
    integral = rho * tau * (p1 * y0 + tau * (p2 * f0 + p3 * df))
    return y1, integral
