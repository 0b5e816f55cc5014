"""Normal-driven ARAP vertex recovery.

Minimizes the sum of an as-rigid-as-possible term over elements (rim-spoke
per-vertex or face-only per-face edge sets, cotangent-weighted from the
reference mesh) and a normal-alignment term pulling each element's rotated
reference normal toward its target. Solved by alternating closed-form
per-element rotation fits with a prefactorized global linear solve.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geom import Mesh, face_areas, face_normals
from .grad import TargetNormals

COT_CLAMP = (1e-6, 1e6)


class ElementKind(str, Enum):
    RIM_SPOKE = "rim_spoke"
    FACE_ONLY = "face_only"


@dataclass(frozen=True)
class RotationField:
    """Per-element 3x3 rotations."""

    matrices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrices", np.asarray(self.matrices, dtype=float))


def _cotangent_weights(mesh: Mesh) -> np.ndarray:
    """cot of the angle opposite each directed face edge, clamped for slivers.

    Row k column c is the weight of the edge opposite corner c of face k,
    i.e. the edge (f[c+1], f[c+2]).
    """
    v = mesh.reference_vertices
    f = mesh.faces
    cots = np.empty((len(f), 3))
    for c in range(3):
        a = v[f[:, c]]
        b = v[f[:, (c + 1) % 3]]
        d = v[f[:, (c + 2) % 3]]
        u, w = b - a, d - a
        cross = np.linalg.norm(np.cross(u, w), axis=1)
        cots[:, c] = (u * w).sum(axis=1) / np.maximum(cross, 1e-300)
    if (np.abs(cots) > COT_CLAMP[1]).any():
        warnings.warn("degenerate triangle: cotangent weights clamped", stacklevel=2)
    return np.clip(cots, -COT_CLAMP[1], COT_CLAMP[1])


@dataclass
class ArapSystem:
    """Assembled elements, weights, constraints, and the cached factorization."""

    mesh: Mesh
    element_kind: ElementKind
    lam: float
    constraints: list[tuple[int, np.ndarray]]
    n_elements: int = 0
    # (element, directed edge) incidences
    inc_elem: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    inc_i: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    inc_j: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    inc_w: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    # (element, face) incidences for the normal term
    nrm_elem: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    nrm_face: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    nrm_a: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    ref_edges: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    ref_normals: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    free: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    fixed_idx: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    fixed_pos: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    laplacian: sp.csr_matrix = field(default=None, repr=False)  # type: ignore[assignment]
    factorization: object = field(default=None, repr=False)


def build_system(
    mesh: Mesh,
    kind: ElementKind = ElementKind.FACE_ONLY,
    lam: float = 1000.0,
    constraints: list[tuple[int, np.ndarray]] | None = None,
) -> ArapSystem:
    """Assemble elements from the reference mesh and factorize the global solve.

    Without positional constraints, vertex 0 is anchored at its reference
    position to remove the translational null space.
    """
    f = mesh.faces
    F = len(f)
    cots = _cotangent_weights(mesh)
    # face corner c owns the directed edge (f[c+1], f[c+2]) opposite to it
    edge_i = np.stack([f[:, 1], f[:, 2], f[:, 0]], axis=1)
    edge_j = np.stack([f[:, 2], f[:, 0], f[:, 1]], axis=1)
    w = np.maximum(cots, COT_CLAMP[0])

    if kind == ElementKind.FACE_ONLY:
        n_elements = F
        inc_elem = np.repeat(np.arange(F), 3)
        inc_i = edge_i.ravel()
        inc_j = edge_j.ravel()
        inc_w = w.ravel()
        nrm_elem = np.arange(F)
        nrm_face = np.arange(F)
        nrm_a = face_areas(mesh, mesh.reference_vertices)
    else:
        # per-vertex elements: each incident face contributes its 3 edges
        n_elements = mesh.num_vertices
        elems, iis, jjs, wws = [], [], [], []
        ne, nf = [], []
        for c in range(3):
            vtx = f[:, c]
            for e in range(3):
                elems.append(vtx)
                iis.append(edge_i[:, e])
                jjs.append(edge_j[:, e])
                wws.append(w[:, e])
            ne.append(vtx)
            nf.append(np.arange(F))
        inc_elem = np.concatenate(elems)
        inc_i = np.concatenate(iis)
        inc_j = np.concatenate(jjs)
        inc_w = np.concatenate(wws)
        nrm_elem = np.concatenate(ne)
        nrm_face = np.concatenate(nf)
        nrm_a = np.repeat(face_areas(mesh, mesh.reference_vertices) / 3.0, 3)

    sys = ArapSystem(
        mesh=mesh,
        element_kind=kind,
        lam=float(lam),
        constraints=[(int(i), np.asarray(p, dtype=float)) for i, p in (constraints or [])],
        n_elements=n_elements,
        inc_elem=inc_elem.astype(np.int64),
        inc_i=inc_i.astype(np.int64),
        inc_j=inc_j.astype(np.int64),
        inc_w=inc_w,
        nrm_elem=nrm_elem.astype(np.int64),
        nrm_face=nrm_face.astype(np.int64),
        nrm_a=nrm_a,
        ref_edges=mesh.reference_vertices[inc_i] - mesh.reference_vertices[inc_j],
        ref_normals=face_normals(mesh, mesh.reference_vertices),
    )

    if not sys.constraints:
        sys.constraints = [(0, mesh.reference_vertices[0].copy())]
    fixed_idx = np.array(sorted({i for i, _ in sys.constraints}), dtype=np.int64)
    pos_by_idx = {i: p for i, p in sys.constraints}
    sys.fixed_idx = fixed_idx
    sys.fixed_pos = np.array([pos_by_idx[i] for i in fixed_idx])
    if len(fixed_idx) >= mesh.num_vertices:
        raise ValueError("all vertices constrained: nothing to solve")
    sys.free = np.setdiff1d(np.arange(mesh.num_vertices), fixed_idx)

    n = mesh.num_vertices
    rows = np.concatenate([inc_i, inc_j, inc_i, inc_j])
    cols = np.concatenate([inc_i, inc_j, inc_j, inc_i])
    vals = np.concatenate([inc_w, inc_w, -inc_w, -inc_w])
    L = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    sys.laplacian = L
    lff = L[sys.free][:, sys.free].tocsc()
    try:
        sys.factorization = spla.splu(lff)
    except RuntimeError as exc:
        raise ValueError(f"singular ARAP system: {exc}") from exc
    return sys


def local_step(system: ArapSystem, v_prime: np.ndarray, T: TargetNormals) -> RotationField:
    """Best-fit rotation per element via SVD of the covariance."""
    S = np.zeros((system.n_elements, 3, 3))
    e_ref = system.ref_edges
    e_cur = v_prime[system.inc_i] - v_prime[system.inc_j]
    contrib = system.inc_w[:, None, None] * e_ref[:, :, None] * e_cur[:, None, :]
    np.add.at(S, system.inc_elem, contrib)
    nt = (
        system.lam
        * system.nrm_a[:, None, None]
        * system.ref_normals[system.nrm_face][:, :, None]
        * T.normals[system.nrm_face][:, None, :]
    )
    np.add.at(S, system.nrm_elem, nt)
    U, _, Vt = np.linalg.svd(S)
    R = np.einsum("kji,klj->kil", Vt, U)  # R = V U^T
    dets = np.linalg.det(R)
    flip = dets < 0
    if flip.any():
        Vt_f = Vt[flip].copy()
        Vt_f[:, -1, :] *= -1.0
        R[flip] = np.einsum("kji,klj->kil", Vt_f, U[flip])
    return RotationField(R)


def global_step(system: ArapSystem, R: RotationField, T: TargetNormals | None = None) -> np.ndarray:
    """Minimize the ARAP term for fixed rotations via the cached factorization."""
    n = system.mesh.num_vertices
    rot_e = np.einsum("kij,kj->ki", R.matrices[system.inc_elem], system.ref_edges)
    b = np.zeros((n, 3))
    np.add.at(b, system.inc_i, system.inc_w[:, None] * rot_e)
    np.add.at(b, system.inc_j, -system.inc_w[:, None] * rot_e)
    out = np.empty((n, 3))
    out[system.fixed_idx] = system.fixed_pos
    rhs = b[system.free] - system.laplacian[system.free][:, system.fixed_idx] @ system.fixed_pos
    out[system.free] = system.factorization.solve(rhs)
    return out


def style_energy(
    system: ArapSystem, v_prime: np.ndarray, R: RotationField, T: TargetNormals
) -> float:
    """E_ARAP + lambda-weighted normal alignment, for monotonicity checks."""
    e_cur = v_prime[system.inc_i] - v_prime[system.inc_j]
    rot_e = np.einsum("kij,kj->ki", R.matrices[system.inc_elem], system.ref_edges)
    arap = float((system.inc_w * ((rot_e - e_cur) ** 2).sum(axis=1)).sum())
    rot_n = np.einsum(
        "kij,kj->ki", R.matrices[system.nrm_elem], system.ref_normals[system.nrm_face]
    )
    nrm = float(
        (system.lam * system.nrm_a * ((rot_n - T.normals[system.nrm_face]) ** 2).sum(axis=1)).sum()
    )
    return arap + nrm


def solve(
    system: ArapSystem,
    T: TargetNormals,
    v_init: np.ndarray,
    iters: int = 30,
) -> np.ndarray:
    """Alternate local and global steps `iters` times from v_init."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    v = np.asarray(v_init, dtype=float).copy()
    for _ in range(iters):
        R = local_step(system, v, T)
        v = global_step(system, R, T)
    return v
