"""Damage identification from electric boundary measurements.

The damage functional sums, over load cases and frequencies, the squared
unbalanced generalized forces on the measured DOFs,

    E = sum_loads sum_k | D_tilde(w_k, pi) m*(w_k) - g*(w_k) + H(w_k, pi) h*(w_k) |^2

which vanishes exactly at the parameters that produced the data.  It is
minimized over the mechanical pair pi1 = (d, x) with a multi-start
Nelder-Mead simplex, optionally inside an alternating max/min loop that
re-tunes the electric parameter beta between minimizations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from pemdetect import spectral
from pemdetect.model import (
    STATUS_CONVERGED,
    STATUS_DEGENERATE_X,
    STATUS_MAX_ITERS,
    STATUS_NON_CONVERGENCE,
    DamageProfile,
    FrequencyGrid,
    IdentificationResult,
    LoadCase,
    MeasurementSet,
    ParameterPoint,
    SystemParams,
    TraceEntry,
)

_BOX_INSET = 1e-6
_DEGENERATE_D = 0.99

DataSource = Union[MeasurementSet, Callable[[float], MeasurementSet]]


class DetectError(RuntimeError):
    pass


@dataclass(frozen=True)
class FunctionalConfig:
    """Experiment definition: frequencies, load cases, sensitivity level."""

    grid: FrequencyGrid
    loads: tuple[LoadCase, ...]
    sensitivity_level: float = 1.0

    def __post_init__(self) -> None:
        if len(self.loads) < 1:
            raise ValueError("need at least one load case")
        if not self.sensitivity_level > 0:
            raise ValueError("sensitivity_level must be > 0")


@dataclass(frozen=True)
class SimplexOptions:
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    diameter_tol: float = 1e-8
    value_tol: float = 1e-12
    max_iters: int = 500
    n_starts: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.reflection > 0:
            raise ValueError("reflection must be > 0")
        if not self.expansion > 1:
            raise ValueError("expansion must be > 1")
        if not 0 < self.contraction < 1:
            raise ValueError("contraction must be in (0, 1)")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must be in (0, 1)")


@dataclass(frozen=True, eq=False)
class SurfaceScan:
    d_grid: np.ndarray
    x_grid: np.ndarray
    beta_grid: np.ndarray
    log10_e: np.ndarray  # (n_beta, n_d, n_x)
    in_sublevel: np.ndarray  # bool, same shape
    areas: np.ndarray  # (n_beta,) sublevel area fraction of the (d, x) rectangle
    n_failed: np.ndarray  # (n_beta,)
    sensitivity_level: float


def default_grid(
    p: SystemParams,
    n: int = 40,
    omega_min: float = 1.0,
    omega_max: float = 120.0,
    guard_frac: float = 0.02,
) -> FrequencyGrid:
    """Uniform frequency grid nudged off the undamaged-system resonances.

    Each point closer to a resonance than guard_frac times the local modal
    spacing is shifted to the edge of that guard band (only meaningful for
    delta = 0, where the reference response is unbounded on resonance).
    """
    om = np.linspace(omega_min, omega_max, n)
    if p.delta == 0.0:
        res = spectral.undamaged_resonances(p, omega_max * 1.05)
        for i, r in enumerate(res):
            gaps = []
            if i > 0:
                gaps.append(r - res[i - 1])
            if i + 1 < len(res):
                gaps.append(res[i + 1] - r)
            guard = guard_frac * min(gaps) if gaps else guard_frac * r
            near = np.abs(om - r) < guard
            om[near] = np.where(om[near] >= r, r + guard, r - guard)
    om = np.unique(om)
    return FrequencyGrid(tuple(float(w) for w in om))


def _measured_indices(dof_map, nodes) -> list[int]:
    last = len(nodes) - 1
    return [dof_map.index((0, "phi", 1)), dof_map.index((last, "phi", 1))]


def _functional_value(
    d: float,
    x: float,
    beta: float,
    data: MeasurementSet,
    p: SystemParams,
    eps: float,
    weights: Optional[np.ndarray] = None,
) -> float:
    """Core evaluation; raises DetectError when no frequency survives."""
    if not (d > 0 and np.isfinite(d) and 0.0 <= x <= 1.0 and beta > 0):
        raise DetectError(f"parameters out of range: d={d}, x={x}, beta={beta}")
    p_eval = p.with_beta(beta)
    dp = DamageProfile(d=d, x=x, eps=eps)
    om = data.grid.as_array()
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        D, dof_map, nodes = spectral.assemble_stack(om, p_eval, dp)
    mi = _measured_indices(dof_map, nodes)
    ok = np.isfinite(D).all(axis=(1, 2))
    terms = np.zeros(om.shape[0])
    valid = np.zeros(om.shape[0], dtype=bool)
    if np.any(ok):
        try:
            Dt, H = spectral.condense_stack(D[ok], mi)
        except np.linalg.LinAlgError:
            Dt = H = None
        if Dt is not None:
            sub = np.zeros((ok.sum(),))
            sub_ok = np.ones(ok.sum(), dtype=bool)
            for case in data.cases:
                res = np.einsum("kij,kj->ki", Dt, case.m_star[ok]) - case.g_star[ok]
                if case.h_star is not None:
                    res = res + np.einsum("kij,kj->ki", H, case.h_star[ok])
                term = np.sum(np.abs(res) ** 2, axis=1)
                sub_ok &= np.isfinite(term)
                sub = sub + np.where(np.isfinite(term), term, 0.0)
            terms[ok] = sub
            valid[ok] = sub_ok
    if not np.any(valid):
        raise DetectError("empty effective frequency set")
    if not np.all(valid):
        warnings.warn(
            "some frequencies were skipped in the damage functional",
            RuntimeWarning,
            stacklevel=2,
        )
    w = np.ones(om.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    return float(np.sum(w[valid] * terms[valid]))


def evaluate_functional(
    pi: ParameterPoint,
    data: MeasurementSet,
    p: SystemParams,
    eps: float,
    weights: Optional[np.ndarray] = None,
) -> float:
    """Damage functional at one parameter point (>= 0; 0 exactly at the truth)."""
    return _functional_value(pi.d, pi.x, pi.pi2, data, p, eps, weights)


@dataclass(frozen=True)
class NelderMeadResult:
    x: np.ndarray
    fx: float
    iterations: int
    n_evals: int
    converged: bool
    best_values: tuple[float, ...]
    best_points: tuple[tuple[float, ...], ...]


def _clamp(x: np.ndarray, box: Optional[np.ndarray]) -> np.ndarray:
    if box is None:
        return x
    return np.minimum(np.maximum(x, box[:, 0]), box[:, 1])


def nelder_mead(
    f: Callable[[np.ndarray], float],
    simplex: np.ndarray,
    opts: SimplexOptions,
    box: Optional[np.ndarray] = None,
) -> NelderMeadResult:
    """Downhill simplex minimization with box clamping.

    `simplex` is the (n+1, n) start simplex; proposals outside `box`
    (shape (n, 2), already inset from any open boundaries) are clamped onto
    it, which keeps the simplex alive near the admissible-set edges.
    Non-finite objective values are treated as +inf, so such proposals are
    rejected as the worst vertex.
    """
    verts = np.array([_clamp(v.astype(float), box) for v in simplex])
    n = verts.shape[1]
    if verts.shape[0] != n + 1:
        raise ValueError("simplex must have n+1 vertices")
    n_evals = 0

    def safe_f(v: np.ndarray) -> float:
        nonlocal n_evals
        n_evals += 1
        try:
            val = f(v)
        except DetectError:
            return math.inf
        return float(val) if np.isfinite(val) else math.inf

    vals = np.array([safe_f(v) for v in verts])
    best_values: list[float] = []
    best_points: list[tuple[float, ...]] = []
    converged = False
    it = 0
    while it < opts.max_iters:
        order = np.argsort(vals, kind="stable")
        verts, vals = verts[order], vals[order]
        best_values.append(float(vals[0]))
        best_points.append(tuple(float(c) for c in verts[0]))
        diameter = float(np.max(np.linalg.norm(verts[1:] - verts[0], axis=1)))
        spread = float(vals[-1] - vals[0])
        if diameter < opts.diameter_tol or spread < opts.value_tol:
            converged = True
            break
        it += 1
        centroid = verts[:-1].mean(axis=0)
        xr = _clamp(centroid + opts.reflection * (centroid - verts[-1]), box)
        fr = safe_f(xr)
        if fr < vals[0]:
            xe = _clamp(centroid + opts.expansion * opts.reflection * (centroid - verts[-1]), box)
            fe = safe_f(xe)
            if fe < fr:
                verts[-1], vals[-1] = xe, fe
            else:
                verts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-2]:
            verts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-1]:  # outside contraction
            xc = _clamp(centroid + opts.contraction * opts.reflection * (centroid - verts[-1]), box)
            fc = safe_f(xc)
            if fc <= fr:
                verts[-1], vals[-1] = xc, fc
                continue
        else:  # inside contraction
            xc = _clamp(centroid - opts.contraction * (centroid - verts[-1]), box)
            fc = safe_f(xc)
            if fc < vals[-1]:
                verts[-1], vals[-1] = xc, fc
                continue
        # shrink toward the best vertex
        for i in range(1, n + 1):
            verts[i] = _clamp(verts[0] + opts.shrink * (verts[i] - verts[0]), box)
            vals[i] = safe_f(verts[i])
    order = np.argsort(vals, kind="stable")
    verts, vals = verts[order], vals[order]
    best_values.append(float(vals[0]))
    best_points.append(tuple(float(c) for c in verts[0]))
    return NelderMeadResult(
        x=verts[0].copy(),
        fx=float(vals[0]),
        iterations=it,
        n_evals=n_evals,
        converged=converged,
        best_values=tuple(best_values),
        best_points=tuple(best_points),
    )


def _pi1_box(eps: float) -> np.ndarray:
    return np.array([[_BOX_INSET, 1.0], [eps + _BOX_INSET, 1.0 - eps - _BOX_INSET]])


def _coordinate_simplex(start: np.ndarray, box: np.ndarray, frac: float = 0.05) -> np.ndarray:
    """Initial simplex by per-coordinate perturbation, kept inside the box."""
    n = start.shape[0]
    verts = [start.copy()]
    for i in range(n):
        step = frac * (box[i, 1] - box[i, 0])
        v = start.copy()
        v[i] = v[i] + step if v[i] + step <= box[i, 1] else v[i] - step
        verts.append(v)
    return np.array(verts)


def identify(
    data: MeasurementSet,
    p: SystemParams,
    eps: float,
    beta_fixed: float,
    opts: SimplexOptions,
    weights: Optional[np.ndarray] = None,
) -> IdentificationResult:
    """Multi-start simplex minimization of the functional over (d, x) at fixed beta."""
    if not beta_fixed > 0:
        raise ValueError("beta_fixed must be > 0")
    box = _pi1_box(eps)
    rng = np.random.default_rng(opts.seed)
    starts = rng.uniform(box[:, 0], box[:, 1], size=(opts.n_starts, 2))

    n_evals = 0

    def objective(v: np.ndarray) -> float:
        nonlocal n_evals
        n_evals += 1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return _functional_value(v[0], v[1], beta_fixed, data, p, eps, weights)

    trace: list[TraceEntry] = []
    best: Optional[NelderMeadResult] = None
    step = 0
    for s, start in enumerate(starts):
        res = nelder_mead(objective, _coordinate_simplex(start, box), opts, box=box)
        for val, pt in zip(res.best_values, res.best_points):
            trace.append(
                TraceEntry(step=step, phase=f"min-pi1[start={s}]", d=pt[0], x=pt[1], beta=beta_fixed, value=val)
            )
            step += 1
        if best is None or res.fx < best.fx:
            best = res
    assert best is not None
    d_hat, x_hat = float(best.x[0]), float(best.x[1])
    if d_hat > _DEGENERATE_D:
        status = STATUS_DEGENERATE_X
    elif best.converged:
        status = STATUS_CONVERGED
    else:
        status = STATUS_MAX_ITERS
    return IdentificationResult(
        d_hat=d_hat,
        x_hat=x_hat,
        beta_used=float(beta_fixed),
        e_final=best.fx,
        status=status,
        trace=tuple(trace),
        n_evals=n_evals,
    )


def golden_section_max(
    g: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-4,
    max_iter: int = 200,
) -> tuple[float, float]:
    """Golden-section search for a maximum on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - invphi * (b - a)
    d_ = a + invphi * (b - a)
    fc, fd = g(c), g(d_)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc > fd:
            b, d_, fd = d_, c, fc
            c = b - invphi * (b - a)
            fc = g(c)
        else:
            a, c, fc = c, d_, fd
            d_ = a + invphi * (b - a)
            fd = g(d_)
    if fc > fd:
        return c, fc
    return d_, fd


def _bind_data(data: DataSource, beta: float) -> MeasurementSet:
    return data(beta) if callable(data) else data


def tune_minmax(
    data: DataSource,
    p: SystemParams,
    eps: float,
    start: ParameterPoint,
    opts: SimplexOptions,
    beta_bracket: tuple[float, float] = (0.5, 2.0),
    beta_tol: float = 1e-3,
    outer_tol: float = 1e-6,
    outer_max: int = 20,
    weights: Optional[np.ndarray] = None,
) -> IdentificationResult:
    """Alternating max (over beta) / min (over (d, x)) identification.

    Each outer iteration first retunes beta to maximize the functional's
    response to the current mechanical estimate (golden-section on the
    bracket), then minimizes over (d, x) at that beta.  `data` may be a
    fixed MeasurementSet or a callable beta -> MeasurementSet modelling an
    experiment that is re-measured after each retuning of the circuit; the
    tuned beta is sensitivity-optimal, it is not itself identified.

    Stops when successive (d, x) iterates move less than outer_tol.  If the
    displacement fails to decrease over three consecutive outer iterations
    the run is flagged non-convergent and the full trace is returned.
    """
    box = _pi1_box(eps)
    pi1 = np.array([start.d, start.x], dtype=float)
    beta = float(start.pi2)
    n_evals = 0

    def value(v: np.ndarray, b: float, ms: MeasurementSet) -> float:
        nonlocal n_evals
        n_evals += 1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            try:
                val = _functional_value(v[0], v[1], b, ms, p, eps, weights)
            except DetectError:
                return math.inf
            return val

    trace: list[TraceEntry] = []
    step = 0

    def record(phase: str, d: float, x: float, b: float, val: float) -> None:
        nonlocal step
        trace.append(TraceEntry(step=step, phase=phase, d=d, x=x, beta=b, value=val))
        step += 1

    ms0 = _bind_data(data, beta)
    record("start", pi1[0], pi1[1], beta, value(pi1, beta, ms0))

    displacements: list[float] = []
    status = STATUS_MAX_ITERS
    for k in range(outer_max):
        # (a) maximization over beta at fixed pi1
        def g(b: float) -> float:
            ms = _bind_data(data, b)
            v = value(pi1, b, ms)
            return -math.inf if not np.isfinite(v) else v

        beta, gval = golden_section_max(g, beta_bracket[0], beta_bracket[1], tol=beta_tol)
        record("max-beta", pi1[0], pi1[1], beta, gval)

        # (b) minimization over pi1 at the retuned beta
        ms = _bind_data(data, beta)
        res = nelder_mead(
            lambda v: value(v, beta, ms), _coordinate_simplex(pi1, box), opts, box=box
        )
        new_pi1 = res.x
        record("min-pi1", new_pi1[0], new_pi1[1], beta, res.fx)

        disp = float(np.linalg.norm(new_pi1 - pi1))
        displacements.append(disp)
        pi1 = new_pi1
        if disp < outer_tol:
            status = STATUS_CONVERGED
            break
        if len(displacements) >= 3 and (
            displacements[-1] >= displacements[-2] >= displacements[-3]
        ):
            status = STATUS_NON_CONVERGENCE
            break

    e_final = value(pi1, beta, _bind_data(data, beta))
    if status == STATUS_CONVERGED and pi1[0] > _DEGENERATE_D:
        status = STATUS_DEGENERATE_X
    return IdentificationResult(
        d_hat=float(pi1[0]),
        x_hat=float(pi1[1]),
        beta_used=float(beta),
        e_final=float(e_final),
        status=status,
        trace=tuple(trace),
        n_evals=n_evals,
    )


def scan_surface(
    p: SystemParams,
    eps: float,
    data: DataSource,
    d_grid: Sequence[float],
    x_grid: Sequence[float],
    beta_grid: Sequence[float],
    sensitivity_level: float = 1.0,
    weights: Optional[np.ndarray] = None,
) -> SurfaceScan:
    """log10 E over a (beta, d, x) grid plus sublevel-set areas per beta.

    Cells that fail to evaluate are marked NaN and excluded from the
    sublevel set; the area is the fraction of the (d, x) rectangle whose
    functional value is at or below the sensitivity level.
    """
    d_arr = np.asarray(d_grid, dtype=float)
    x_arr = np.asarray(x_grid, dtype=float)
    b_arr = np.asarray(beta_grid, dtype=float)
    if d_arr.size == 0 or x_arr.size == 0 or b_arr.size == 0:
        raise ValueError("scan grids must be nonempty")
    log10_e = np.full((b_arr.size, d_arr.size, x_arr.size), np.nan)
    sub = np.zeros_like(log10_e, dtype=bool)
    n_failed = np.zeros(b_arr.size, dtype=int)
    tiny = np.finfo(float).tiny
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for ib, b in enumerate(b_arr):
            ms = _bind_data(data, float(b))
            for idd, dv in enumerate(d_arr):
                for ix, xv in enumerate(x_arr):
                    try:
                        e = _functional_value(float(dv), float(xv), float(b), ms, p, eps, weights)
                    except DetectError:
                        n_failed[ib] += 1
                        continue
                    log10_e[ib, idd, ix] = np.log10(max(e, tiny))
                    sub[ib, idd, ix] = e <= sensitivity_level
    areas = sub.reshape(b_arr.size, -1).mean(axis=1)
    return SurfaceScan(
        d_grid=d_arr,
        x_grid=x_arr,
        beta_grid=b_arr,
        log10_e=log10_e,
        in_sublevel=sub,
        areas=areas,
        n_failed=n_failed,
        sensitivity_level=float(sensitivity_level),
    )
