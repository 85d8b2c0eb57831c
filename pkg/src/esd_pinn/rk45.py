"""Adaptive Dormand-Prince 5(4) integrator with dense output.

The solution is propagated with the fifth-order weights; the embedded
fourth-order solution only feeds the error estimate. Output times are
filled in with the pair's quartic continuous extension, so the step
sequence never depends on the output grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .esd_model import EsdParameters, rhs_array
from .solution import SolutionTable

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

# Continuous extension (Shampine): coefficients of theta, theta^2, theta^3, theta^4.
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
ERROR_EXPONENT = -1 / 5


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ToleranceSpec:
    atol: float = 1e-6
    rtol: float = 1e-3

    def __post_init__(self):
        for name in ("atol", "rtol"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")


@dataclass(frozen=True, eq=False)
class StepRecord:
    t_start: float
    t_end: float
    y_start: np.ndarray
    y_end: np.ndarray
    k_stages: np.ndarray


@dataclass(frozen=True, eq=False)
class IntegrationResult:
    table: SolutionTable
    n_accepted: int
    n_rejected: int
    n_rhs: int
    steps: list[StepRecord] | None = None


def dopri_step(fun: Callable, t: float, y: np.ndarray, h: float, f0: np.ndarray | None = None):
    """One Dormand-Prince step of ``y' = fun(t, y)``.

    Returns ``(y5, err_est, stages)`` with ``err_est = |y5 - y4|`` and the
    seven stage derivatives as rows of ``stages``.
    """
    y = np.asarray(y, dtype=np.float64)
    k = np.empty((7, y.size))
    k[0] = fun(t, y) if f0 is None else f0
    for i in range(1, 6):
        dy = np.dot(A[i], k[:i])
        k[i] = fun(t + C[i] * h, y + h * dy)
    y5 = y + h * np.dot(B5[:6], k[:6])
    k[6] = fun(t + h, y5)
    err = np.abs(h * np.dot(E, k))
    return y5, err, k


def step(params: EsdParameters, y, t: float, h: float):
    """One embedded step on the ESD system."""
    if not h > 0:
        raise ValueError("step size must be positive")
    return dopri_step(lambda _t, x: rhs_array(params, x), t, np.asarray(y, dtype=np.float64), h)


def _dense(rec: StepRecord, theta: np.ndarray) -> np.ndarray:
    powers = np.cumprod(np.repeat(theta[:, None], 4, axis=1), axis=1)
    h = rec.t_end - rec.t_start
    return rec.y_start + h * (powers @ (rec.k_stages.T @ P).T)


def interpolate(rec: StepRecord, t: float) -> np.ndarray:
    """Continuous extension of one accepted step."""
    if not rec.t_start <= t <= rec.t_end:
        raise ValueError(f"t={t} outside step [{rec.t_start}, {rec.t_end}]")
    theta = (t - rec.t_start) / (rec.t_end - rec.t_start)
    return _dense(rec, np.array([theta]))[0]


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def initial_step(fun, t0, y0, f0, direction_span, tol: ToleranceSpec, order: int = 4) -> float:
    """Automatic starting step from local derivative magnitudes (Hairer et al.)."""
    scale = tol.atol + np.abs(y0) * tol.rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, direction_span)
    f1 = fun(t0 + h0, y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100 * h0, h1, direction_span)


def solve(
    fun: Callable,
    y0,
    t_span,
    tol: ToleranceSpec,
    grid,
    keep_steps: bool = False,
) -> IntegrationResult:
    """Integrate ``y' = fun(t, y)`` over ``t_span`` and sample at ``grid``."""
    a, b = float(t_span[0]), float(t_span[1])
    if not a < b:
        raise ValueError(f"t_span must satisfy a < b, got ({a}, {b})")
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise ValueError("empty output grid")
    if np.any(np.diff(grid) < 0):
        raise ValueError("output grid must be sorted ascending")
    if grid[0] < a or grid[-1] > b:
        raise ValueError(f"output grid must lie within [{a}, {b}]")
    y = np.array(y0, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise IntegrationError(f"integration failure at t={a}: non-finite initial state")

    out = np.empty((grid.size, y.size))
    n_out = int(np.searchsorted(grid, a, side="right"))
    out[:n_out] = y

    t = a
    f = fun(t, y)
    n_rhs = 1
    h = initial_step(fun, t, y, f, b - a, tol)
    n_rhs += 1
    h_min = 1e-14 * (b - a)
    n_acc = n_rej = 0
    steps = [] if keep_steps else None

    while t < b:
        if h < h_min:
            raise IntegrationError(f"integration failure at t={t}: step size {h:.3e} underflow")
        h = min(h, b - t)
        t_new = b if t + h >= b else t + h
        h = t_new - t
        y_new, err, k = dopri_step(fun, t, y, h, f)
        n_rhs += 6
        if not np.all(np.isfinite(y_new)):
            raise IntegrationError(f"integration failure at t={t}: non-finite state")
        scale = tol.atol + tol.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = _rms(err / scale)
        if err_norm > 1.0:
            n_rej += 1
            h *= max(MIN_FACTOR, SAFETY * err_norm ** ERROR_EXPONENT)
            continue

        n_acc += 1
        rec = StepRecord(t, t_new, y, y_new, k)
        if keep_steps:
            steps.append(rec)
        hi = grid.size if t_new >= b else int(np.searchsorted(grid, t_new, side="right"))
        if hi > n_out:
            theta = (grid[n_out:hi] - t) / h
            vals = _dense(rec, theta)
            vals[theta == 1.0] = y_new
            out[n_out:hi] = vals
            n_out = hi
        factor = MAX_FACTOR if err_norm == 0 else min(
            MAX_FACTOR, max(MIN_FACTOR, SAFETY * err_norm ** ERROR_EXPONENT))
        t, y, f = t_new, y_new, k[6]
        h *= factor

    return IntegrationResult(SolutionTable(grid, out), n_acc, n_rej, n_rhs, steps)


def integrate(params: EsdParameters, y0, t_span, tol: ToleranceSpec, grid) -> SolutionTable:
    """ESD trajectory from ``y0`` sampled at ``grid``."""
    return solve(lambda _t, x: rhs_array(params, x), y0, t_span, tol, grid).table
