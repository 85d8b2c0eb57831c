"""Accuracy protocols for comparing ESD solutions.

Two views are provided. ``residual_mse`` differentiates a sampled solution
by finite differences and measures how well it satisfies the system.
``compare_metrics`` scores a candidate against a reference solution on the
same grid with R^2, MAE, MSE and RMSE.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .esd_model import EsdParameters, rhs_array
from .solution import SolutionTable

COMPONENTS = ("x1", "x2", "x3", "x4")
EQUATIONS = ("eq1", "eq2", "eq3", "eq4")


class GridMismatch(ValueError):
    def __init__(self, index: int, t_ref: float | None, t_cand: float | None):
        if t_ref is None or t_cand is None:
            msg = f"grid sizes differ (first unmatched index {index})"
        else:
            msg = f"grids differ at index {index}: t={t_ref!r} vs t={t_cand!r}"
        super().__init__(msg)
        self.index = index


@dataclass(frozen=True)
class Metrics:
    r_squared: float | None
    """``None`` when the reference component has zero variance."""
    mae: float
    mse: float
    rmse: float

    def to_dict(self) -> dict:
        return {"r2": self.r_squared, "mae": self.mae, "mse": self.mse, "rmse": self.rmse}


def _uniform_step(times: np.ndarray) -> float:
    h = (times[-1] - times[0]) / (times.size - 1)
    if not np.allclose(np.diff(times), h, rtol=1e-9, atol=0.0):
        raise ValueError("finite differences need a uniformly spaced grid")
    return h


def finite_diff_derivatives(table: SolutionTable, edge_order: int = 2) -> np.ndarray:
    """Second-order central differences; one-sided three-point stencils at the ends.

    ``edge_order=1`` switches the end points to two-point differences.
    """
    t, y = table.times, table.states
    if t.size < 3:
        raise ValueError("need at least 3 samples")
    h = _uniform_step(t)
    d = np.empty_like(y)
    d[1:-1] = (y[2:] - y[:-2]) / (2.0 * h)
    if edge_order == 2:
        d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h)
        d[-1] = (3.0 * y[-1] - 4.0 * y[-2] + y[-3]) / (2.0 * h)
    elif edge_order == 1:
        d[0] = (y[1] - y[0]) / h
        d[-1] = (y[-1] - y[-2]) / h
    else:
        raise ValueError(f"edge_order must be 1 or 2, got {edge_order}")
    return d


def residual_mse(table: SolutionTable, params: EsdParameters, edge_order: int = 2,
                 derivatives: np.ndarray | None = None) -> np.ndarray:
    """Per-equation mean squared mismatch between both sides of the system.

    ``derivatives`` replaces the finite-difference estimate, e.g. with a
    network's exact time derivatives.
    """
    d = finite_diff_derivatives(table, edge_order) if derivatives is None else np.asarray(derivatives)
    r = d - rhs_array(params, table.states)
    return np.mean(r * r, axis=0)


def check_same_grid(reference: SolutionTable, candidate: SolutionTable) -> None:
    a, b = reference.times, candidate.times
    n = min(a.size, b.size)
    bad = np.nonzero(a[:n] != b[:n])[0]
    if bad.size:
        i = int(bad[0])
        raise GridMismatch(i, float(a[i]), float(b[i]))
    if a.size != b.size:
        raise GridMismatch(n, None, None)


def compare_metrics(reference: SolutionTable, candidate: SolutionTable) -> dict[str, Metrics]:
    """Score ``candidate`` against ``reference`` per state component."""
    check_same_grid(reference, candidate)
    y, y_hat = reference.states, candidate.states
    diff = y - y_hat
    sse = np.sum(diff * diff, axis=0)
    sst = np.sum((y - y.mean(axis=0)) ** 2, axis=0)
    mae = np.mean(np.abs(diff), axis=0)
    mse = sse / y.shape[0]
    out = {}
    for k, name in enumerate(COMPONENTS):
        r2 = None if sst[k] == 0 else float(1.0 - sse[k] / sst[k])
        out[name] = Metrics(r2, float(mae[k]), float(mse[k]), math.sqrt(mse[k]))
    return out


@dataclass(frozen=True)
class ComparisonReport:
    residual: dict[str, dict[str, float]]
    metrics: dict[str, Metrics]
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "residual_mse": self.residual,
            "metrics": {k: m.to_dict() for k, m in self.metrics.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ComparisonReport":
        metrics = {k: Metrics(v["r2"], v["mae"], v["mse"], v["rmse"])
                   for k, v in data["metrics"].items()}
        return cls(data["residual_mse"], metrics, data.get("meta", {}))

    @classmethod
    def from_json(cls, text: str) -> "ComparisonReport":
        return cls.from_dict(json.loads(text))

    def render(self) -> str:
        def fmt(v):
            return "undefined" if v is None else f"{v:.10g}"

        methods = list(self.residual)
        width = 18
        lines = ["Residual MSE (finite-difference derivatives substituted into the system)"]
        lines.append("method".ljust(width) + "".join(f"{c + ' error':>{width}}" for c in COMPONENTS))
        for m in methods:
            row = self.residual[m]
            lines.append(m.ljust(width) + "".join(f"{fmt(row[e]):>{width}}" for e in EQUATIONS))
        lines.append("")
        lines.append("Direct comparison (reference vs candidate)")
        lines.append("metric".ljust(width) + "".join(f"{c:>{width}}" for c in COMPONENTS))
        for label, attr in (("R-squared", "r_squared"), ("MAE", "mae"), ("MSE", "mse"), ("RMSE", "rmse")):
            lines.append(label.ljust(width) + "".join(
                f"{fmt(getattr(self.metrics[c], attr)):>{width}}" for c in COMPONENTS))
        return "\n".join(lines)


def build_report(rk_table: SolutionTable, pinn_table: SolutionTable, params: EsdParameters,
                 meta: dict | None = None, edge_order: int = 2) -> ComparisonReport:
    check_same_grid(rk_table, pinn_table)
    residual = {}
    for name, table in (("rk45", rk_table), ("pinn", pinn_table)):
        mse = residual_mse(table, params, edge_order)
        residual[name] = {e: float(v) for e, v in zip(EQUATIONS, mse)}
    info = {
        "grid_size": int(rk_table.times.size),
        "t_span": [float(rk_table.times[0]), float(rk_table.times[-1])],
        "methods": {"reference": "rk45", "candidate": "pinn"},
        "fd_edge_order": edge_order,
    }
    info.update(meta or {})
    return ComparisonReport(residual, compare_metrics(rk_table, pinn_table), info)
