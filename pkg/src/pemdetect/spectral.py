"""Exact frequency-domain spectral elements for the coupled beam/line system.

Conventions
-----------
Time dependence exp(+i*omega*t).  On each constant-parameter interval the
transformed fields satisfy

    alpha_h u'''' - omega^2 u - i omega gamma phi''                   = 0
    beta   phi''''- omega^2 phi + i omega delta phi + i omega gamma u'' = 0

with boundary duals M = alpha u'' - i omega gamma phi (bending moment) and
mu = beta phi'' + i omega gamma u (electric bending moment).

Internally the electric kinematic unknowns are stored scaled, chi = i*phi,
and the electric force balances are multiplied by i.  In (u, chi) variables
the gyroscopic coupling becomes a real symmetric block, which makes every
element matrix and the assembled dynamic stiffness complex symmetric whenever
delta = 0.  The scaling cancels on the condensed 2x2 operator over the two
measured electric DOFs (both carry the same factor), so measured responses
m = (phi'_0, phi'_1) and their duals g = (-mu0, +mu1) are reported in
physical units and satisfy D_tilde m = g - H h exactly.

Nodal ordering is node-major with 4 DOFs per node: (u, u', chi, chi').
Generalized forces follow the outward sign convention, so the static
gamma = 0 limit of an element reproduces the classic Hermite beam stiffness.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pemdetect.model import (
    DamageProfile,
    FrequencyGrid,
    LoadCase,
    MeasurementCase,
    MeasurementSet,
    SystemParams,
)

_UNIT4 = np.array([1.0, 1.0j, -1.0, -1.0j])
_DEGENERACY_TOL = 1e-8
_MIN_INTERVAL = 1e-12
_COND_THRESHOLD = 1e12


class SpectralError(RuntimeError):
    pass


class ElementConditioningError(SpectralError):
    def __init__(self, interval: tuple[float, float], omega: float, cond: float):
        self.interval = interval
        self.omega = omega
        self.cond = cond
        super().__init__(
            f"element basis on [{interval[0]:.6g}, {interval[1]:.6g}] is "
            f"ill-conditioned at omega={omega:.6g} (cond ~ {cond:.3g})"
        )


class CondensationError(SpectralError):
    def __init__(self, omega: float):
        self.omega = omega
        super().__init__(f"unmeasured block is singular at omega={omega:.6g}")


class FrequencySolveError(SpectralError):
    def __init__(self, omega: float, cond: float):
        self.omega = omega
        self.cond = cond
        super().__init__(
            f"dynamic stiffness is singular or ill-conditioned at "
            f"omega={omega:.6g} (cond ~ {cond:.3g})"
        )


@dataclass(frozen=True)
class DispersionRoots:
    """The 8 wavenumbers of one interval, closed under k -> i*k."""

    roots: np.ndarray
    k4_branches: tuple[complex, complex]
    degenerate: bool

    def residuals(self, omega: float, alpha_h: float, p: SystemParams) -> np.ndarray:
        """|characteristic polynomial| at each root."""
        k4 = self.roots**4
        a = p.beta * alpha_h
        b = 1j * p.delta * omega * alpha_h - (p.beta + alpha_h + p.gamma**2) * omega**2
        c = omega**4 - 1j * p.delta * omega**3
        return np.abs(a * k4 * k4 + b * k4 + c)


@dataclass(frozen=True)
class ElementMatrix:
    interval: tuple[float, float]
    alpha_h: float
    K: np.ndarray  # (8, 8) complex


@dataclass(frozen=True)
class DynamicStiffness:
    """Free-DOF dynamic stiffness after essential constraints at both ends."""

    D: np.ndarray  # (n_free, n_free) complex
    dof_map: tuple[tuple[int, str, int], ...]  # (node, field, derivative order)
    nodes: tuple[float, ...]
    omega: float

    def measured_indices(self) -> tuple[int, int]:
        """Free-DOF indices of the two boundary phi' DOFs."""
        last = len(self.nodes) - 1
        i0 = self.dof_map.index((0, "phi", 1))
        i1 = self.dof_map.index((last, "phi", 1))
        return i0, i1


@dataclass(frozen=True)
class CondensedPair:
    D_tilde: np.ndarray  # (2, 2)
    H: np.ndarray  # (2, n_unmeasured)
    measured: tuple[int, ...]


def _k4_branches(omega: np.ndarray, alpha_h: float, p: SystemParams):
    """Solve the dispersion quadratic in k^4 (stable quadratic formula)."""
    om = np.asarray(omega, dtype=float)
    a = p.beta * alpha_h
    b = 1j * p.delta * om * alpha_h - (p.beta + alpha_h + p.gamma**2) * om**2
    c = om**4 - 1j * p.delta * om**3
    disc = np.sqrt(b * b - 4.0 * a * c + 0j)
    sgn = np.where(np.real(np.conj(b) * disc) >= 0.0, 1.0, -1.0)
    q = -0.5 * (b + sgn * disc)
    with np.errstate(divide="raise", invalid="raise"):
        z1 = q / a
        z2 = c / q
    return z1, z2


def dispersion_roots(
    omega: float,
    alpha_h: float,
    p: SystemParams,
    degeneracy_tol: float = _DEGENERACY_TOL,
) -> DispersionRoots:
    """All 8 wavenumbers at one frequency: {1, i, -1, -i} x each k^4 branch root."""
    if not (omega > 0 and alpha_h > 0 and p.beta > 0):
        raise ValueError("dispersion requires omega > 0, alpha_h > 0, beta > 0")
    z1, z2 = _k4_branches(np.array([omega]), alpha_h, p)
    z1, z2 = complex(z1[0]), complex(z2[0])
    if not (np.isfinite(z1) and np.isfinite(z2)):
        raise SpectralError("non-finite dispersion branches")
    if abs(z1) == 0.0 and abs(z2) == 0.0:
        raise SpectralError("both k^4 branches vanish")
    roots = np.concatenate([(z1 ** 0.25) * _UNIT4, (z2 ** 0.25) * _UNIT4])
    degenerate = abs(z1 - z2) < degeneracy_tol * max(abs(z1), abs(z2))
    return DispersionRoots(roots=roots, k4_branches=(z1, z2), degenerate=degenerate)


def _basis(omega: np.ndarray, alpha_h: float, p: SystemParams):
    """Wavenumbers and per-root polarizations (u_j, chi_j) for a batch of omegas.

    For gamma = 0 the k^4 branches may coincide (alpha_h = beta); there the
    symbol is diagonal and every repeated root is semi-simple, carrying both
    a pure-mechanical and a pure-electric polarization, so the basis is built
    exactly from 4 roots x 2 unit polarizations instead of perturbing beta.
    """
    om = np.asarray(omega, dtype=float)
    n = om.shape[0]
    om2 = om**2

    if p.gamma == 0.0:
        z_mech = (om2 / alpha_h).astype(complex)
        z_elec = (om2 - 1j * p.delta * om) / p.beta
        roots = np.empty((n, 8), dtype=complex)
        roots[:, :4] = (z_mech**0.25)[:, None] * _UNIT4
        roots[:, 4:] = (z_elec**0.25)[:, None] * _UNIT4
        u_pol = np.zeros((n, 8), dtype=complex)
        x_pol = np.zeros((n, 8), dtype=complex)
        u_pol[:, :4] = 1.0
        x_pol[:, 4:] = 1.0
        return roots, u_pol, x_pol

    z1, z2 = _k4_branches(om, alpha_h, p)
    degen = np.abs(z1 - z2) < _DEGENERACY_TOL * np.maximum(np.abs(z1), np.abs(z2))
    if np.any(degen):
        # Exotic (delta != 0) coincidence of the branches; nudge beta off it.
        warnings.warn(
            "degenerate dispersion branches; perturbing beta by 1e-9",
            RuntimeWarning,
            stacklevel=2,
        )
        z1d, z2d = _k4_branches(om, alpha_h, p.with_beta(p.beta * (1.0 + 1e-9)))
        z1 = np.where(degen, z1d, z1)
        z2 = np.where(degen, z2d, z2)

    roots = np.empty((n, 8), dtype=complex)
    roots[:, :4] = (z1**0.25)[:, None] * _UNIT4
    roots[:, 4:] = (z2**0.25)[:, None] * _UNIT4

    # Kernel of the (symmetric, in scaled variables) 2x2 symbol at each root:
    #   [[a, b], [b, dd]] with a = alpha k^4 - w^2, b = -w gamma k^2,
    #   dd = beta k^4 - w^2 + i w delta.  Take whichever of (b, -a), (dd, -b)
    #   is better scaled.
    k2 = roots**2
    k4 = k2 * k2
    a = alpha_h * k4 - om2[:, None]
    b = -(om * p.gamma)[:, None] * k2
    dd = p.beta * k4 - om2[:, None] + (1j * p.delta * om)[:, None]
    n1 = np.abs(b) ** 2 + np.abs(a) ** 2
    n2 = np.abs(dd) ** 2 + np.abs(b) ** 2
    pick2 = n2 > n1
    u_pol = np.where(pick2, dd, b)
    x_pol = np.where(pick2, -b, -a)
    scale = np.maximum(np.abs(u_pol), np.abs(x_pol))
    u_pol = u_pol / scale
    x_pol = x_pol / scale
    return roots, u_pol, x_pol


def _element_stack(
    omega: np.ndarray,
    interval: tuple[float, float],
    alpha_h: float,
    p: SystemParams,
) -> np.ndarray:
    """Element dynamic stiffness (n, 8, 8) for a batch of frequencies.

    Shifted exponentials exp[k (s - a)] keep growth bounded by the element
    length; K_e = F G^{-1} with G the coefficient->kinematics map and F the
    coefficient->forces map.
    """
    om = np.asarray(omega, dtype=float)
    n = om.shape[0]
    a_end, b_end = interval
    length = b_end - a_end

    roots, u_pol, x_pol = _basis(om, alpha_h, p)
    expf = np.exp(roots * length)

    ku = roots * u_pol
    kx = roots * x_pol
    G = np.empty((n, 8, 8), dtype=complex)
    G[:, 0, :] = u_pol
    G[:, 1, :] = ku
    G[:, 2, :] = x_pol
    G[:, 3, :] = kx
    G[:, 4, :] = u_pol * expf
    G[:, 5, :] = ku * expf
    G[:, 6, :] = x_pol * expf
    G[:, 7, :] = kx * expf

    # Force rows use the weak-form duals: shears are the full coupled moment
    # gradients M' = alpha u''' - w gamma chi' and mu' = beta chi''' - w gamma u',
    # while the moment slots carry the field-wise moments alpha u'' and
    # beta chi''.  These coincide with the physical bending/electric moments
    # wherever the conjugate essential field vanishes (in particular at the
    # supported/grounded ends where moments are applied) and are exactly what
    # keeps K_e complex symmetric for delta = 0.
    k2 = roots**2
    wg = (om * p.gamma)[:, None]
    m_grad = alpha_h * k2 * roots * u_pol - wg * roots * x_pol  # M' coefficients
    w_grad = p.beta * k2 * roots * x_pol - wg * roots * u_pol  # mu' coefficients
    m_mom = alpha_h * k2 * u_pol  # alpha u''
    w_mom = p.beta * k2 * x_pol  # beta chi''
    F = np.empty((n, 8, 8), dtype=complex)
    F[:, 0, :] = m_grad  # M'(a)
    F[:, 1, :] = -m_mom  # -(alpha u'')(a)
    F[:, 2, :] = w_grad  # mu'(a)
    F[:, 3, :] = -w_mom  # -(beta chi'')(a)
    F[:, 4, :] = -m_grad * expf  # -M'(b)
    F[:, 5, :] = m_mom * expf  # (alpha u'')(b)
    F[:, 6, :] = -w_grad * expf  # -mu'(b)
    F[:, 7, :] = w_mom * expf  # (beta chi'')(b)

    # K_e = F G^{-1}  via  K_e^T = G^{-T} F^T
    Ke = np.linalg.solve(np.swapaxes(G, 1, 2), np.swapaxes(F, 1, 2))
    return np.swapaxes(Ke, 1, 2)


def element_matrix(
    interval: tuple[float, float],
    omega: float,
    alpha_h: float,
    p: SystemParams,
    cond_threshold: float = _COND_THRESHOLD,
) -> ElementMatrix:
    """Single-frequency spectral element with a conditioning check."""
    a_end, b_end = interval
    if not b_end > a_end:
        raise ValueError("interval must have positive length")
    om = np.array([float(omega)])
    roots, u_pol, x_pol = _basis(om, alpha_h, p)
    expf = np.exp(roots * (b_end - a_end))
    G = np.empty((1, 8, 8), dtype=complex)
    ku = roots * u_pol
    kx = roots * x_pol
    G[:, 0, :] = u_pol
    G[:, 1, :] = ku
    G[:, 2, :] = x_pol
    G[:, 3, :] = kx
    G[:, 4, :] = u_pol * expf
    G[:, 5, :] = ku * expf
    G[:, 6, :] = x_pol * expf
    G[:, 7, :] = kx * expf
    cond = float(np.linalg.cond(G[0]))
    if not np.isfinite(cond) or cond > cond_threshold:
        raise ElementConditioningError(interval, float(omega), cond)
    Ke = _element_stack(om, interval, alpha_h, p)[0]
    return ElementMatrix(interval=(float(a_end), float(b_end)), alpha_h=float(alpha_h), K=Ke)


def _partition(dp: DamageProfile) -> tuple[list[tuple[float, float]], list[bool]]:
    """Break [0, 1] at the (clipped) notch interfaces; flag damaged intervals."""
    lo = min(max(dp.x - dp.eps, 0.0), 1.0)
    hi = min(max(dp.x + dp.eps, 0.0), 1.0)
    pts = [0.0]
    for q in (lo, hi, 1.0):
        if q - pts[-1] > _MIN_INTERVAL:
            pts.append(q)
    if pts[-1] != 1.0:
        pts[-1] = 1.0
    intervals = [(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]
    damaged = [dp.x - dp.eps < 0.5 * (a + b) < dp.x + dp.eps for a, b in intervals]
    return intervals, damaged


def _free_dofs(n_nodes: int):
    """All nodal DOFs minus the essential u = phi = 0 constraints at the ends."""
    ndof = 4 * n_nodes
    constrained = {0, 2, 4 * (n_nodes - 1), 4 * (n_nodes - 1) + 2}
    free = [i for i in range(ndof) if i not in constrained]
    fields = ("u", "u", "phi", "phi")
    orders = (0, 1, 0, 1)
    dof_map = tuple((i // 4, fields[i % 4], orders[i % 4]) for i in free)
    return np.asarray(free, dtype=int), dof_map


def assemble_stack(
    omega: np.ndarray, p: SystemParams, dp: DamageProfile
) -> tuple[np.ndarray, tuple[tuple[int, str, int], ...], tuple[float, ...]]:
    """Assembled free-DOF dynamic stiffness (n, n_free, n_free) for a frequency batch."""
    om = np.asarray(omega, dtype=float)
    intervals, damaged = _partition(dp)
    n_nodes = len(intervals) + 1
    ndof = 4 * n_nodes
    K = np.zeros((om.shape[0], ndof, ndof), dtype=complex)
    for e, (iv, dmg) in enumerate(zip(intervals, damaged)):
        alpha_h = p.alpha0 * dp.d if dmg else p.alpha0
        sl = slice(4 * e, 4 * e + 8)
        K[:, sl, sl] += _element_stack(om, iv, alpha_h, p)
    free, dof_map = _free_dofs(n_nodes)
    D = K[:, free][:, :, free]
    nodes = tuple([iv[0] for iv in intervals] + [1.0])
    return D, dof_map, nodes


def assemble(omega: float, p: SystemParams, dp: DamageProfile) -> DynamicStiffness:
    """Free-DOF dynamic stiffness at one frequency (12x12 for a 3-interval notch)."""
    D, dof_map, nodes = assemble_stack(np.array([float(omega)]), p, dp)
    return DynamicStiffness(D=D[0], dof_map=dof_map, nodes=nodes, omega=float(omega))


def condense_stack(D: np.ndarray, measured: Sequence[int]):
    """Schur condensation of a (n, m, m) stack onto the measured DOFs.

    Returns (D_tilde (n, q, q), H (n, q, r)) with q = len(measured).
    """
    m = np.asarray(measured, dtype=int)
    size = D.shape[-1]
    rest = np.asarray([i for i in range(size) if i not in set(m.tolist())], dtype=int)
    if rest.size == 0:
        q = m.size
        return D[:, m][:, :, m], np.zeros((D.shape[0], q, 0), dtype=complex)
    Dmm = D[:, m][:, :, m]
    Dmn = D[:, m][:, :, rest]
    Dnm = D[:, rest][:, :, m]
    Dnn = D[:, rest][:, :, rest]
    X = np.linalg.solve(Dnn, Dnm)
    Dt = Dmm - Dmn @ X
    Ht = np.linalg.solve(np.swapaxes(Dnn, 1, 2), np.swapaxes(Dmn, 1, 2))
    H = np.swapaxes(Ht, 1, 2)
    return Dt, H


def condense(ds: DynamicStiffness, measured: Sequence[int]) -> CondensedPair:
    """D_tilde = D_mm - D_mn D_nn^{-1} D_nm and H = D_mn D_nn^{-1}."""
    try:
        Dt, H = condense_stack(ds.D[None, :, :], measured)
    except np.linalg.LinAlgError as exc:
        raise CondensationError(ds.omega) from exc
    return CondensedPair(D_tilde=Dt[0], H=H[0], measured=tuple(int(i) for i in measured))


def load_vector(
    dof_map: tuple[tuple[int, str, int], ...],
    nodes: tuple[float, ...],
    load: LoadCase,
) -> np.ndarray:
    """Scaled generalized forces for boundary electric moments (mu0, mu1).

    The electric force slots carry the i-scaling of the chi variables; the
    outward convention puts -i*mu0 at the left phi' DOF and +i*mu1 at the
    right one.
    """
    last = len(nodes) - 1
    f = np.zeros(len(dof_map), dtype=complex)
    f[dof_map.index((0, "phi", 1))] = -1j * load.mu0
    f[dof_map.index((last, "phi", 1))] = 1j * load.mu1
    return f


def solve_frf(
    omega: float,
    p: SystemParams,
    dp: DamageProfile,
    load: LoadCase,
    cond_threshold: float = _COND_THRESHOLD,
) -> np.ndarray:
    """Full free-DOF response O solving D O = I at one frequency."""
    ds = assemble(omega, p, dp)
    cond = float(np.linalg.cond(ds.D))
    if not np.isfinite(cond) or cond > cond_threshold:
        raise FrequencySolveError(float(omega), cond)
    rhs = load_vector(ds.dof_map, ds.nodes, load)
    return np.linalg.solve(ds.D, rhs)


def boundary_electric_pair(O: np.ndarray, ds: DynamicStiffness) -> np.ndarray:
    """Physical (phi'_0, phi'_1) from a scaled response vector."""
    i0, i1 = ds.measured_indices()
    return -1j * O[[i0, i1]]


def physical_dual_pair(load: LoadCase) -> np.ndarray:
    """Dual inputs to the measured pair, outward convention: (-mu0, +mu1)."""
    return np.array([-load.mu0, load.mu1], dtype=complex)


def synthesize_measurements(
    p: SystemParams,
    dp_true: DamageProfile,
    grid: FrequencyGrid,
    loads: Sequence[LoadCase],
    cond_threshold: float = _COND_THRESHOLD,
) -> MeasurementSet:
    """Synthetic electric measurements: m = (phi'_0, phi'_1) per load and frequency.

    Frequencies where the system is numerically singular for any load are
    dropped from the grid with a warning; the functional tolerates any subset.
    """
    om = grid.as_array()
    D, dof_map, nodes = assemble_stack(om, p, dp_true)
    conds = np.linalg.cond(D)
    ok = np.isfinite(conds) & (conds < cond_threshold)
    if not np.all(ok):
        bad = om[~ok]
        warnings.warn(
            f"dropping {bad.size} unsolvable frequencies: {np.array2string(bad, precision=4)}",
            RuntimeWarning,
            stacklevel=2,
        )
    if not np.any(ok):
        raise FrequencySolveError(float(om[0]), float(conds[0]))
    om = om[ok]
    D = D[ok]
    rhs = np.stack(
        [np.tile(load_vector(dof_map, nodes, ld), (om.shape[0], 1)) for ld in loads],
        axis=2,
    )
    O = np.linalg.solve(D, rhs)  # (K, n_free, n_loads)
    last = len(nodes) - 1
    i0 = dof_map.index((0, "phi", 1))
    i1 = dof_map.index((last, "phi", 1))
    m_phys = -1j * O[:, [i0, i1], :]  # (K, 2, n_loads)
    grid_eff = FrequencyGrid(tuple(float(w) for w in om))
    cases = []
    for j, ld in enumerate(loads):
        g = np.tile(physical_dual_pair(ld), (om.shape[0], 1))
        cases.append(MeasurementCase(load=ld, m_star=m_phys[:, :, j], g_star=g))
    return MeasurementSet(grid=grid_eff, cases=tuple(cases))


def undamaged_resonances(p: SystemParams, omega_max: float) -> list[float]:
    """Coupled resonances of the uniform (d = 1) undamped system below omega_max.

    Sine modes diagonalize the uniform system exactly, so for each mode
    number n the two coupled frequencies solve a quadratic in omega^2.
    Only meaningful for delta = 0 (undamped poles).
    """
    out: list[float] = []
    s = p.alpha0 + p.beta + p.gamma**2
    disc = s * s - 4.0 * p.alpha0 * p.beta
    root = np.sqrt(max(disc, 0.0))
    n = 1
    while True:
        k2 = (n * np.pi) ** 2
        w_lo = k2 * np.sqrt((s - root) / 2.0)
        w_hi = k2 * np.sqrt((s + root) / 2.0)
        if w_lo > omega_max:
            break
        for w in (w_lo, w_hi):
            if w <= omega_max:
                out.append(float(w))
        n += 1
    return sorted(out)
