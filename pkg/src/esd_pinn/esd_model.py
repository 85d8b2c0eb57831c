"""Four-dimensional energy supply-demand (ESD) system.

    x1' = a1*x1*(1 - x1/M) - a2*(x2 + x3) - d3*x4
    x2' = -z1*x2 - z2*x3 + z3*x1*(N - (x1 - x3))
    x3' = s1*x3*(s2*x1 - s3)
    x4' = d1*x1 - d2*x4

x1 is the energy demand of region F, x2 the supply from region E to F,
x3 the imports of F and x4 its renewable resources. All quantities are
dimensionless.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Any, NamedTuple

import numpy as np

PARAM_NAMES = ("a1", "a2", "z1", "z2", "z3", "s1", "s2", "s3", "d1", "d2", "d3", "M", "N")


@dataclass(frozen=True)
class EsdParameters:
    """Coefficients of the ESD system.

    Construction does not validate; call :func:`validate_params` for that.
    Degenerate settings (e.g. ``d3=0``) are occasionally useful in tests.
    """

    a1: float
    a2: float
    z1: float
    z2: float
    z3: float
    s1: float
    s2: float
    s3: float
    d1: float
    d2: float
    d3: float
    M: float
    N: float

    def to_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EsdParameters":
        missing = [n for n in PARAM_NAMES if n not in data]
        if missing:
            raise KeyError(f"missing ESD parameters: {', '.join(missing)}")
        unknown = sorted(set(data) - set(PARAM_NAMES))
        if unknown:
            raise KeyError(f"unknown ESD parameters: {', '.join(unknown)}")
        return cls(**{n: float(data[n]) for n in PARAM_NAMES})


class State(NamedTuple):
    x1: float
    x2: float
    x3: float
    x4: float


class StateDerivative(NamedTuple):
    dx1: float
    dx2: float
    dx3: float
    dx4: float


@dataclass(frozen=True)
class Violation:
    field: str
    message: str


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def fields(self) -> list[str]:
        return [v.field for v in self.violations]


def default_chaotic_params() -> EsdParameters:
    """Coefficient set under which the system behaves chaotically."""
    return EsdParameters(
        a1=0.09, a2=0.15,
        z1=0.06, z2=0.082, z3=0.07,
        s1=0.2, s2=0.5, s3=0.4,
        d1=0.1, d2=0.06, d3=0.08,
        M=1.8, N=1.0,
    )


def default_initial_state() -> State:
    return State(0.82, 0.29, 0.48, 0.1)


def validate_params(params: EsdParameters) -> ValidationResult:
    """Check strict positivity of every coefficient and ``N < M``.

    Never raises; every violated constraint is reported.
    """
    out = []
    for f in fields(params):
        value = getattr(params, f.name)
        if not np.isfinite(value) or value <= 0:
            out.append(Violation(f.name, f"{f.name} must be a finite positive number, got {value!r}"))
    if not params.N < params.M:
        out.append(Violation("N < M", f"N < M required, got N={params.N!r}, M={params.M!r}"))
    return ValidationResult(tuple(out))


def rhs_array(params: EsdParameters, x: np.ndarray) -> np.ndarray:
    """Vectorised right-hand side; ``x`` has shape ``(..., 4)``."""
    p = params
    x1, x2, x3, x4 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    out = np.empty(np.shape(x), dtype=np.float64)
    out[..., 0] = p.a1 * x1 * (1.0 - x1 / p.M) - p.a2 * (x2 + x3) - p.d3 * x4
    out[..., 1] = -p.z1 * x2 - p.z2 * x3 + p.z3 * x1 * (p.N - (x1 - x3))
    out[..., 2] = p.s1 * x3 * (p.s2 * x1 - p.s3)
    out[..., 3] = p.d1 * x1 - p.d2 * x4
    return out


def rhs(params: EsdParameters, s) -> StateDerivative:
    """Evaluate the system at a single state."""
    x = np.asarray(s, dtype=np.float64)
    if x.shape != (4,):
        raise ValueError(f"state must have 4 components, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite state")
    return StateDerivative(*(float(v) for v in rhs_array(params, x)))
