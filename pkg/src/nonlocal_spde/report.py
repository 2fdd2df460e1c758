"""Named metrics and discrete norm proxies.

Norm proxies (documented in every report that uses them):

* ``l2``  -- ``(h sum u_i^2)^{1/2}``
* ``h1``  -- ``l2`` plus the forward-difference gradient term, Dirichlet zeros at the ends
* ``h2``  -- ``h1`` plus the second-difference term
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def discrete_norms(u, h: float) -> dict[str, float]:
    u = np.asarray(u, dtype=float)
    padded = np.concatenate([[0.0], u, [0.0]])
    d1 = np.diff(padded) / h
    d2 = np.diff(padded, 2) / h**2
    l2 = h * np.sum(u**2)
    g = h * np.sum(d1**2)
    s = h * np.sum(d2**2)
    return {"l2": math.sqrt(l2), "h1": math.sqrt(l2 + g), "h2": math.sqrt(l2 + g + s), "grad": math.sqrt(g)}


@dataclass
class Metric:
    value: float
    tolerance: float | None = None
    units: str = ""
    # "le": pass iff value <= tolerance, "ge": value >= tolerance
    sense: str = "le"

    @property
    def passed(self) -> bool | None:
        if self.tolerance is None:
            return None
        if not np.isfinite(self.value):
            return False
        if self.sense == "ge":
            return bool(self.value >= self.tolerance)
        return bool(self.value <= self.tolerance)


@dataclass
class ResidualReport:
    metrics: dict[str, Metric] = field(default_factory=dict)
    tables: dict[str, list[dict]] = field(default_factory=dict)

    def add(self, name: str, value, tolerance=None, units: str = "", sense: str = "le") -> Metric:
        m = Metric(float(value), None if tolerance is None else float(tolerance), units, sense)
        self.metrics[name] = m
        return m

    def merge(self, other: "ResidualReport", prefix: str = "") -> None:
        for k, m in other.metrics.items():
            self.metrics[prefix + k] = m
        for k, t in other.tables.items():
            self.tables[prefix + k] = t

    def __getitem__(self, name: str) -> float:
        return self.metrics[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.metrics

    @property
    def all_passed(self) -> bool:
        return all(m.passed is not False for m in self.metrics.values())

    def failures(self) -> list[str]:
        return [k for k, m in self.metrics.items() if m.passed is False]

    def write_csv(self, path: Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value", "tolerance", "pass", "units"])
            for name, m in self.metrics.items():
                tol = "" if m.tolerance is None else repr(m.tolerance)
                passed = "" if m.passed is None else str(m.passed).lower()
                w.writerow([name, repr(m.value), tol, passed, m.units])
        return path
