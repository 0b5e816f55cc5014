"""Triangle mesh container, OBJ I/O, differential quantities, and edge splits.

The mesh carries two vertex sets with shared connectivity: the deformed
positions (``vertices``) and the undeformed reference (``reference_vertices``).
Topology edits are applied to both in lockstep so the elastic energy stays
well defined across subdivision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AREA_EPS = 1e-12


class MeshError(ValueError):
    """Raised on invalid mesh input (parse errors, non-manifold topology)."""


@dataclass(frozen=True)
class EdgeRef:
    """An undirected mesh edge, canonicalized as (lower index, higher index)."""

    endpoints: tuple[int, int]
    adjacent_faces: tuple[int, ...]

    @property
    def is_interior(self) -> bool:
        return len(self.adjacent_faces) == 2


@dataclass(frozen=True)
class Mesh:
    """Indexed triangle mesh with deformed and reference vertex sets.

    Faces are CCW-oriented vertex-index triples. ``vertices`` and
    ``reference_vertices`` share indexing and connectivity. Instances are
    immutable; topology-changing operations return a new Mesh.
    """

    vertices: np.ndarray
    faces: np.ndarray
    reference_vertices: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        r = self.reference_vertices
        r = v.copy() if r is None else np.ascontiguousarray(np.asarray(r, dtype=np.float64))
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "reference_vertices", r)
        _validate(v, f, r)
        for a in (v, f, r):
            a.setflags(write=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Same topology and reference, new deformed positions."""
        return Mesh(vertices, self.faces, self.reference_vertices)

    def bbox_diagonal(self) -> float:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))


def _validate(v: np.ndarray, f: np.ndarray, r: np.ndarray):
    if v.ndim != 2 or v.shape[1] != 3:
        raise MeshError("vertices must be (n, 3)")
    if f.ndim != 2 or f.shape[1] != 3:
        raise MeshError("faces must be triangles (m, 3)")
    if r.shape != v.shape:
        raise MeshError("reference_vertices must match vertices in shape")
    if f.size:
        if f.min() < 0 or f.max() >= len(v):
            raise MeshError("face index out of range")
        if (f[:, 0] == f[:, 1]).any() or (f[:, 1] == f[:, 2]).any() or (f[:, 0] == f[:, 2]).any():
            raise MeshError("face repeats a vertex")
    # Edge-manifold + consistent orientation: every directed edge unique,
    # every undirected edge shared by at most 2 faces.
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    key = directed[:, 0] * len(v) + directed[:, 1]
    if len(np.unique(key)) != len(key):
        raise MeshError("inconsistent orientation or non-manifold edge (duplicate directed edge)")
    ukey = np.minimum(directed[:, 0], directed[:, 1]) * len(v) + np.maximum(
        directed[:, 0], directed[:, 1]
    )
    _, counts = np.unique(ukey, return_counts=True)
    if (counts > 2).any():
        raise MeshError("non-manifold edge (shared by more than 2 faces)")


def load_mesh(path) -> Mesh:
    """Load a Wavefront OBJ with triangular faces.

    Texture/normal records are ignored; reference_vertices is initialized
    to the loaded positions.
    """
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: malformed vertex record")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(f"{path}:{lineno}: non-triangular face")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    if not verts or not faces:
        raise MeshError(f"{path}: no geometry found")
    return Mesh(np.array(verts), np.array(faces))


def save_mesh(mesh: Mesh, path):
    """Write the deformed mesh as ASCII OBJ at full double precision."""
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def normalize_scale(mesh: Mesh, diagonal: float = 3.0) -> Mesh:
    """Uniformly scale and center so the bounding-box diagonal equals `diagonal`.

    The reference vertices receive the identical transform.
    """
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    diag = np.linalg.norm(hi - lo)
    if diag < 1e-12:
        raise MeshError("degenerate mesh: zero bounding-box extent")
    s = diagonal / diag
    c = 0.5 * (lo + hi)
    return Mesh(
        (mesh.vertices - c) * s,
        mesh.faces,
        (mesh.reference_vertices - c) * s,
    )


def face_normals(mesh: Mesh, vertices: np.ndarray | None = None) -> np.ndarray:
    """Per-face unit normals from the CCW cross product."""
    v = mesh.vertices if vertices is None else vertices
    f = mesh.faces
    c = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    norm = np.linalg.norm(c, axis=1)
    if (0.5 * norm < AREA_EPS).any():
        raise MeshError("zero-area face")
    return c / norm[:, None]


def face_areas(mesh: Mesh, vertices: np.ndarray | None = None) -> np.ndarray:
    """Per-face areas (half cross-product magnitude)."""
    v = mesh.vertices if vertices is None else vertices
    f = mesh.faces
    c = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return 0.5 * np.linalg.norm(c, axis=1)


def edge_list(mesh: Mesh) -> list[EdgeRef]:
    """All undirected edges with their adjacent faces, canonically ordered."""
    f = mesh.faces
    adj: dict[tuple[int, int], list[int]] = {}
    for fi in range(len(f)):
        a, b, c = f[fi]
        for i, j in ((a, b), (b, c), (c, a)):
            key = (int(min(i, j)), int(max(i, j)))
            adj.setdefault(key, []).append(fi)
    return [EdgeRef(k, tuple(v)) for k, v in sorted(adj.items())]


def edge_map(mesh: Mesh) -> dict[tuple[int, int], EdgeRef]:
    return {e.endpoints: e for e in edge_list(mesh)}


def ring_edges(mesh: Mesh, edge: EdgeRef) -> list[EdgeRef]:
    """Boundary edges of the faces adjacent to `edge`, excluding the edge itself."""
    emap = edge_map(mesh)
    return _ring_edges(mesh, edge, emap)


def _ring_edges(mesh: Mesh, edge: EdgeRef, emap: dict[tuple[int, int], EdgeRef]) -> list[EdgeRef]:
    out = []
    seen = {edge.endpoints}
    for fi in edge.adjacent_faces:
        a, b, c = mesh.faces[fi]
        for i, j in ((a, b), (b, c), (c, a)):
            key = (int(min(i, j)), int(max(i, j)))
            if key not in seen:
                seen.add(key)
                out.append(emap[key])
    return out


def _split_face(face, i, j, m):
    """Replace the directed edge i->j (or j->i) of `face` with two faces via midpoint m."""
    f = [int(x) for x in face]
    for r in range(3):
        a, b, c = f[r], f[(r + 1) % 3], f[(r + 2) % 3]
        if (a, b) == (i, j) or (a, b) == (j, i):
            return [a, m, c], [m, b, c]
    raise MeshError("edge not on face")


def split_edge(mesh: Mesh, edge: EdgeRef) -> Mesh:
    """Split one interior edge at its midpoint, in deformed and reference coordinates.

    The two adjacent faces are each replaced by two children; the represented
    surface is unchanged at the instant of the split.
    """
    m, report = split_edges(mesh, [edge])
    if not report:
        raise MeshError("edge could not be split (boundary edge?)")
    return m


def split_edges(mesh: Mesh, edges: list[EdgeRef]) -> tuple[Mesh, list[tuple[EdgeRef, int]]]:
    """Split a batch of interior edges at their midpoints.

    Edges invalidated by an earlier split in the same batch (an adjacent face
    already replaced) are skipped. Returns the new mesh and the list of
    (edge, new vertex index) actually applied.
    """
    verts = [v for v in mesh.vertices]
    ref = [v for v in mesh.reference_vertices]
    faces: dict[int, list[int]] = {i: [int(x) for x in f] for i, f in enumerate(mesh.faces)}
    next_face = len(mesh.faces)
    applied: list[tuple[EdgeRef, int]] = []
    for e in edges:
        if not e.is_interior:
            continue
        if any(fi not in faces for fi in e.adjacent_faces):
            continue  # invalidated earlier in this batch
        i, j = e.endpoints
        ok = all(
            i in faces[fi] and j in faces[fi] for fi in e.adjacent_faces
        )
        if not ok:
            continue
        mi = len(verts)
        verts.append(0.5 * (mesh.vertices[i] + mesh.vertices[j]))
        ref.append(0.5 * (mesh.reference_vertices[i] + mesh.reference_vertices[j]))
        for fi in e.adjacent_faces:
            f1, f2 = _split_face(faces[fi], i, j, mi)
            del faces[fi]
            faces[next_face] = f1
            faces[next_face + 1] = f2
            next_face += 2
        applied.append((e, mi))
    if not applied:
        return mesh, []
    new_faces = [faces[k] for k in sorted(faces)]
    return Mesh(np.array(verts), np.array(new_faces), np.array(ref)), applied
