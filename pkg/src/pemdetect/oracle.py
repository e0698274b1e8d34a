"""Independent cubic-Hermite finite-element discretization of the coupled system.

Used to cross-validate the spectral solver and to compute eigenfrequencies.
Both fields (deflection u and flux linkage phi) obey fourth-order operators,
so both are interpolated with C1 Hermite cubics.  DOFs are node-major,
(u, u', phi, phi') per node, in physical (unscaled) variables:

    D_fe(omega) = K - omega^2 M + i omega C

with K, M real symmetric, M positive definite, and C collecting the line
resistance (symmetric, delta * mass on the phi block) plus the gyroscopic
piezoelectric coupling (skew between the field blocks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from pemdetect.model import DamageProfile, LoadCase, SystemParams


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class FeMesh:
    """Node coordinates plus the per-element bending stiffness."""

    nodes: np.ndarray  # (n_nodes,)
    alphas: np.ndarray  # (n_elems,)

    @property
    def n_elems(self) -> int:
        return len(self.alphas)


@dataclass(frozen=True, eq=False)
class FeSystem:
    K: np.ndarray
    M: np.ndarray
    C: np.ndarray
    free: np.ndarray
    dof_map: tuple[tuple[int, str, int], ...]
    gamma: float
    delta: float


def _hermite_bending(h: float) -> np.ndarray:
    return (
        np.array(
            [
                [12.0, 6.0 * h, -12.0, 6.0 * h],
                [6.0 * h, 4.0 * h * h, -6.0 * h, 2.0 * h * h],
                [-12.0, -6.0 * h, 12.0, -6.0 * h],
                [6.0 * h, 2.0 * h * h, -6.0 * h, 4.0 * h * h],
            ]
        )
        / h**3
    )


def _hermite_mass(h: float) -> np.ndarray:
    return (h / 420.0) * np.array(
        [
            [156.0, 22.0 * h, 54.0, -13.0 * h],
            [22.0 * h, 4.0 * h * h, 13.0 * h, -3.0 * h * h],
            [54.0, 13.0 * h, 156.0, -22.0 * h],
            [-13.0 * h, -3.0 * h * h, -22.0 * h, 4.0 * h * h],
        ]
    )


def _hermite_grad(h: float) -> np.ndarray:
    # integral of N_i' N_j'
    return (1.0 / (30.0 * h)) * np.array(
        [
            [36.0, 3.0 * h, -36.0, 3.0 * h],
            [3.0 * h, 4.0 * h * h, -3.0 * h, -h * h],
            [-36.0, -3.0 * h, 36.0, -3.0 * h],
            [3.0 * h, -h * h, -3.0 * h, 4.0 * h * h],
        ]
    )


def fe_mesh(p: SystemParams, dp: DamageProfile, n_elems: int) -> FeMesh:
    """Mesh with nodes exactly on the notch interfaces x +- eps."""
    if n_elems < 12:
        raise ValueError("need at least 12 elements")
    lo, hi = dp.x - dp.eps, dp.x + dp.eps
    if not (0.0 < lo < hi < 1.0):
        raise OracleError("damage zone must lie strictly inside the beam")
    segments = [(0.0, lo), (lo, hi), (hi, 1.0)]
    lengths = [b - a for a, b in segments]
    counts = [max(1, round(n_elems * L)) for L in lengths]
    counts[int(np.argmax(lengths))] += n_elems - sum(counts)
    if min(counts) < 1:
        raise OracleError("element budget too small for the damage zone")
    nodes = [0.0]
    alphas = []
    for (a, b), cnt, dmg in zip(segments, counts, (False, True, False)):
        step = (b - a) / cnt
        for i in range(1, cnt + 1):
            nodes.append(a + i * step)
            alphas.append(p.alpha0 * dp.d if dmg else p.alpha0)
    nodes[-1] = 1.0
    return FeMesh(nodes=np.asarray(nodes), alphas=np.asarray(alphas))


def refine(mesh: FeMesh, factor: int = 2) -> FeMesh:
    """Split every element into `factor` equal parts (nested refinement)."""
    nodes = [mesh.nodes[0]]
    alphas = []
    for e in range(mesh.n_elems):
        a, b = mesh.nodes[e], mesh.nodes[e + 1]
        for i in range(1, factor + 1):
            nodes.append(a + (b - a) * i / factor)
            alphas.append(mesh.alphas[e])
    return FeMesh(nodes=np.asarray(nodes), alphas=np.asarray(alphas))


def fe_assemble(p: SystemParams, dp: DamageProfile, mesh: FeMesh) -> FeSystem:
    """Assemble K, M, C on the free DOFs (u = phi = 0 at both ends eliminated)."""
    expected = np.array(
        [p.alpha0 * dp.d if dp.x - dp.eps < m < dp.x + dp.eps else p.alpha0
         for m in 0.5 * (mesh.nodes[:-1] + mesh.nodes[1:])]
    )
    if not np.allclose(expected, mesh.alphas):
        raise OracleError("mesh is not aligned with the damage profile")

    n_nodes = len(mesh.nodes)
    ndof = 4 * n_nodes
    K = np.zeros((ndof, ndof))
    M = np.zeros((ndof, ndof))
    C = np.zeros((ndof, ndof))
    for e in range(mesh.n_elems):
        h = mesh.nodes[e + 1] - mesh.nodes[e]
        kb = _hermite_bending(h)
        me = _hermite_mass(h)
        se = _hermite_grad(h)
        iu = np.array([4 * e, 4 * e + 1, 4 * e + 4, 4 * e + 5])
        ip = iu + 2
        K[np.ix_(iu, iu)] += mesh.alphas[e] * kb
        K[np.ix_(ip, ip)] += p.beta * kb
        M[np.ix_(iu, iu)] += me
        M[np.ix_(ip, ip)] += me
        C[np.ix_(ip, ip)] += p.delta * me
        # gyroscopic piezo coupling, skew between blocks
        C[np.ix_(iu, ip)] += p.gamma * se
        C[np.ix_(ip, iu)] -= p.gamma * se
    constrained = {0, 2, 4 * (n_nodes - 1), 4 * (n_nodes - 1) + 2}
    free = np.asarray([i for i in range(ndof) if i not in constrained], dtype=int)
    fields = ("u", "u", "phi", "phi")
    orders = (0, 1, 0, 1)
    dof_map = tuple((i // 4, fields[i % 4], orders[i % 4]) for i in free)
    return FeSystem(
        K=K[np.ix_(free, free)],
        M=M[np.ix_(free, free)],
        C=C[np.ix_(free, free)],
        free=free,
        dof_map=dof_map,
        gamma=p.gamma,
        delta=p.delta,
    )


def _block_indices(sys: FeSystem, field: str) -> np.ndarray:
    return np.asarray([i for i, (_, f, _) in enumerate(sys.dof_map) if f == field])


def eigenfrequencies(sys: FeSystem, n_modes: int, block: str = "auto") -> np.ndarray:
    """Ascending undamped natural frequencies.

    block="mechanical" / "electric" restricts to one field (only meaningful
    when gamma = 0); block="coupled" solves the quadratic eigenproblem with
    the gyroscopic coupling; "auto" picks mechanical when gamma = 0, else
    coupled.  Damped (delta != 0) eigenproblems are out of scope.
    """
    if sys.delta != 0.0:
        raise OracleError("eigenfrequencies are defined for the undamped system")
    if block == "auto":
        block = "mechanical" if sys.gamma == 0.0 else "coupled"
    if block in ("mechanical", "electric"):
        if sys.gamma != 0.0:
            raise OracleError("field blocks are only decoupled when gamma = 0")
        idx = _block_indices(sys, "u" if block == "mechanical" else "phi")
        vals = scipy.linalg.eigh(
            sys.K[np.ix_(idx, idx)], sys.M[np.ix_(idx, idx)], eigvals_only=True
        )
        vals = np.sqrt(np.maximum(vals, 0.0))
        return np.sort(vals)[:n_modes]
    if block != "coupled":
        raise ValueError(f"unknown block {block!r}")
    n = sys.K.shape[0]
    a = np.zeros((2 * n, 2 * n), dtype=complex)
    minv_k = np.linalg.solve(sys.M, sys.K)
    minv_c = np.linalg.solve(sys.M, sys.C)
    a[:n, n:] = np.eye(n)
    a[n:, :n] = minv_k
    a[n:, n:] = 1j * minv_c
    vals = np.linalg.eigvals(a)
    real = vals[np.abs(vals.imag) < 1e-6 * np.maximum(np.abs(vals), 1.0)].real
    pos = np.sort(real[real > 1e-8])
    return pos[:n_modes]


def fe_frf(sys: FeSystem, omega: float, load: LoadCase) -> np.ndarray:
    """Boundary electric response pair (phi'_0, phi'_1) at one frequency."""
    D = sys.K - omega**2 * sys.M + 1j * omega * sys.C
    last = max(node for node, _, _ in sys.dof_map)
    i0 = sys.dof_map.index((0, "phi", 1))
    i1 = sys.dof_map.index((last, "phi", 1))
    rhs = np.zeros(sys.K.shape[0], dtype=complex)
    rhs[i0] = -load.mu0
    rhs[i1] = load.mu1
    try:
        resp = np.linalg.solve(D, rhs)
    except np.linalg.LinAlgError as exc:
        raise OracleError(f"singular FE system at omega={omega:.6g}") from exc
    return resp[[i0, i1]]


def simply_supported_frequencies(alpha: float, n_modes: int) -> np.ndarray:
    """Closed form for the uniform pinned beam: omega_n = sqrt(alpha) (n pi)^2."""
    n = np.arange(1, n_modes + 1)
    return np.sqrt(alpha) * (n * np.pi) ** 2
