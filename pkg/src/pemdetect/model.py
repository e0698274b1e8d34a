"""Domain types for the coupled beam / transmission-line damage problem.

Everything is dimensionless: the beam spans s in [0, 1], frequencies are
angular and positive, and the electric line shares the beam's abscissa.
Types are frozen dataclasses; construction is permissive (any finite values)
and `validate_params` is the single gate that checks the physical and
search-space invariants, so that out-of-range candidates can still be
represented and reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERS = "max-iters"
STATUS_DEGENERATE_X = "degenerate-x"
STATUS_NON_CONVERGENCE = "non-convergence"


@dataclass(frozen=True)
class SystemParams:
    """Constitutive constants of the coupled system.

    alpha0: baseline bending stiffness of the beam
    beta:   line stiffness (inductance-derived); the tunable electric knob
    gamma:  piezoelectric coupling coefficient
    delta:  line resistance (damping)
    """

    alpha0: float = 1.0
    beta: float = 1.0
    gamma: float = 0.05
    delta: float = 0.0

    def with_beta(self, beta: float) -> "SystemParams":
        return replace(self, beta=float(beta))


@dataclass(frozen=True)
class DamageProfile:
    """Rectangular stiffness notch: retention d on (x - eps, x + eps).

    d is the stiffness retention fraction (1 = undamaged), x the notch
    center, eps the known half-width.
    """

    d: float
    x: float
    eps: float


@dataclass(frozen=True)
class ParameterPoint:
    """A candidate in the split parameter space: pi1 = (d, x), pi2 = beta."""

    pi1: tuple[float, float]
    pi2: float

    @property
    def d(self) -> float:
        return self.pi1[0]

    @property
    def x(self) -> float:
        return self.pi1[1]


@dataclass(frozen=True)
class LoadCase:
    """Electric bending moments applied at the two line ends, flat in omega."""

    mu0: complex
    mu1: complex

    def __post_init__(self) -> None:
        if self.mu0 == 0 and self.mu1 == 0:
            raise ValueError("load case must apply a nonzero electric moment at one end")


@dataclass(frozen=True)
class FrequencyGrid:
    """Strictly increasing positive angular frequencies."""

    omegas: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.omegas) < 1:
            raise ValueError("frequency grid needs at least one frequency")
        arr = np.asarray(self.omegas, dtype=float)
        if not np.all(np.isfinite(arr)) or arr[0] <= 0.0:
            raise ValueError("frequencies must be finite and > 0")
        if np.any(np.diff(arr) <= 0.0):
            raise ValueError("frequencies must be strictly increasing")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.omegas, dtype=float)

    def __len__(self) -> int:
        return len(self.omegas)


@dataclass(frozen=True, eq=False)
class MeasurementCase:
    """Measured boundary responses for one load case.

    m_star: (K, 2) complex boundary flux-linkage derivatives (phi'_0, phi'_1)
    g_star: (K, 2) complex dual inputs, outward sign convention (-mu0, +mu1)
    h_star: (K, n_unmeasured) interior inputs, or None meaning identically zero
    """

    load: LoadCase
    m_star: np.ndarray
    g_star: np.ndarray
    h_star: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    grid: FrequencyGrid
    cases: tuple[MeasurementCase, ...]

    def __post_init__(self) -> None:
        k = len(self.grid)
        for case in self.cases:
            if case.m_star.shape != (k, 2) or case.g_star.shape != (k, 2):
                raise ValueError("m_star and g_star must have shape (K, 2)")


@dataclass(frozen=True)
class TraceEntry:
    """One optimizer step: which phase produced it and the point it reached."""

    step: int
    phase: str
    d: float
    x: float
    beta: float
    value: float


@dataclass(frozen=True)
class IdentificationResult:
    d_hat: float
    x_hat: float
    beta_used: float
    e_final: float
    status: str
    trace: tuple[TraceEntry, ...]
    n_evals: int = 0

    def as_dict(self) -> dict:
        return {
            "d_hat": self.d_hat,
            "x_hat": self.x_hat,
            "beta_used": self.beta_used,
            "E_final": self.e_final,
            "status": self.status,
            "n_evals": self.n_evals,
            "trace": [
                {
                    "step": t.step,
                    "phase": t.phase,
                    "d": t.d,
                    "x": t.x,
                    "beta": t.beta,
                    "value": t.value,
                }
                for t in self.trace
            ],
        }


def validate_params(p: SystemParams, dp: DamageProfile) -> list[str]:
    """Check every invariant; return the full list of violations (empty = ok)."""
    errors: list[str] = []
    for name in ("alpha0", "beta", "gamma", "delta"):
        v = getattr(p, name)
        if not math.isfinite(v):
            errors.append(f"{name} must be finite (got {v})")
    if p.alpha0 <= 0:
        errors.append(f"alpha0 must be > 0 (got {p.alpha0})")
    if p.beta <= 0:
        errors.append(f"beta must be > 0 (got {p.beta})")
    if p.gamma < 0:
        errors.append(f"gamma must be >= 0 (got {p.gamma})")
    if p.delta < 0:
        errors.append(f"delta must be >= 0 (got {p.delta})")
    for name in ("d", "x", "eps"):
        v = getattr(dp, name)
        if not math.isfinite(v):
            errors.append(f"{name} must be finite (got {v})")
    if dp.d <= 0:
        errors.append(f"d must be > 0 (got {dp.d})")
    if dp.d > 1:
        errors.append(f"d must be <= 1 (got {dp.d})")
    if dp.eps <= 0:
        errors.append(f"eps must be > 0 (got {dp.eps})")
    if dp.eps > 0.25:
        errors.append(f"eps must be <= 0.25 (got {dp.eps})")
    if dp.x <= dp.eps:
        errors.append(f"x must exceed eps (got x={dp.x}, eps={dp.eps})")
    if dp.x >= 1 - dp.eps:
        errors.append(f"x must be below 1 - eps (got x={dp.x}, eps={dp.eps})")
    return errors


def ensure_valid(p: SystemParams, dp: DamageProfile) -> None:
    errors = validate_params(p, dp)
    if errors:
        raise ValueError("invalid parameters: " + "; ".join(errors))


def stiffness_at(s: float, p: SystemParams, dp: DamageProfile) -> float:
    """Bending stiffness alpha(s): alpha0*d strictly inside the notch, else alpha0.

    The notch interfaces x +- eps take the outside value (a measure-zero
    convention; the solvers only ever use interval membership).
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"abscissa must lie in [0, 1] (got {s})")
    if dp.x - dp.eps < s < dp.x + dp.eps:
        return p.alpha0 * dp.d
    return p.alpha0


def measurement_sets_equal(a: MeasurementSet, b: MeasurementSet) -> bool:
    """Exact (bitwise) equality of two measurement sets."""
    if a.grid.omegas != b.grid.omegas or len(a.cases) != len(b.cases):
        return False
    for ca, cb in zip(a.cases, b.cases):
        if ca.load != cb.load:
            return False
        if not np.array_equal(ca.m_star, cb.m_star):
            return False
        if not np.array_equal(ca.g_star, cb.g_star):
            return False
        ha = ca.h_star if ca.h_star is not None else None
        hb = cb.h_star if cb.h_star is not None else None
        if (ha is None) != (hb is None):
            return False
        if ha is not None and not np.array_equal(ha, hb):
            return False
    return True
