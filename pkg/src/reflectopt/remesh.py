"""Adaptive edge-split selection from reflectivity and bending criteria.

Edges are scored by the product of the local reflectivity energy of their
adjacent faces and the length-weighted dihedral bending of their one-ring;
the top fraction by product is split at the midpoint on both the deformed
and reference meshes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import EdgeRef, Mesh, edge_map, face_normals, split_edges, _ring_edges


@dataclass(frozen=True)
class SplitReport:
    """Scored and selected edges of one split batch."""

    scored: list[tuple[EdgeRef, float, float, float]]  # (edge, C_refl, C_geom, product)
    selected: list[EdgeRef]
    new_vertices: list[int]

    def rows(self):
        """CSV-friendly rows for the edges actually split."""
        applied = {e.endpoints for e in self.selected}
        for e, cr, cg, p in self.scored:
            if e.endpoints in applied:
                yield (e.endpoints[0], e.endpoints[1], cr, cg, p)


def refl_criterion(per_face_energy: np.ndarray, edge: EdgeRef) -> float:
    """Sum of the adjacent faces' reflectivity energies."""
    return float(sum(per_face_energy[f] for f in edge.adjacent_faces))


def geom_criterion(mesh: Mesh, edge: EdgeRef, normals=None, emap=None) -> float:
    """Length-weighted dihedral bending summed over the edge's ring edges."""
    if normals is None:
        normals = face_normals(mesh)
    if emap is None:
        emap = edge_map(mesh)
    total = 0.0
    for ring in _ring_edges(mesh, edge, emap):
        if not ring.is_interior:
            continue
        f1, f2 = ring.adjacent_faces
        d = float(np.clip(normals[f1] @ normals[f2], -1.0, 1.0))
        length = float(
            np.linalg.norm(mesh.vertices[ring.endpoints[0]] - mesh.vertices[ring.endpoints[1]])
        )
        total += length * math.acos(d)
    return total


def score_edges(mesh: Mesh, per_face_energy: np.ndarray):
    """Score every interior edge by C_refl * C_geom."""
    normals = face_normals(mesh)
    emap = edge_map(mesh)
    scored = []
    for e in emap.values():
        if not e.is_interior:
            continue
        cr = refl_criterion(per_face_energy, e)
        cg = geom_criterion(mesh, e, normals, emap)
        scored.append((e, cr, cg, cr * cg))
    return scored


def select_and_split(
    mesh: Mesh, per_face_energy: np.ndarray, fraction: float = 0.05
) -> tuple[Mesh, SplitReport]:
    """Split the top-`fraction` interior edges by score product.

    Zero-scoring edges are never split. Edges invalidated by an earlier
    split in the same batch are skipped, not replaced.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must lie in (0, 1]")
    scored = score_edges(mesh, per_face_energy)
    n_interior = len(scored)
    if n_interior == 0:
        return mesh, SplitReport(scored, [], [])
    budget = math.ceil(fraction * n_interior)
    # descending by product, ties broken by canonical edge id
    ranked = sorted(scored, key=lambda s: (-s[3], s[0].endpoints))
    candidates = [s[0] for s in ranked[:budget] if s[3] > 0.0]
    new_mesh, applied = split_edges(mesh, candidates)
    return new_mesh, SplitReport(
        scored, [e for e, _ in applied], [vi for _, vi in applied]
    )
