"""Procedural test meshes: spheres, grids, plates, and ridge fixtures."""

from __future__ import annotations

import numpy as np

from .geom import Mesh, normalize_scale


def plate(size: float = 1.0) -> Mesh:
    """Two-triangle square plate in the z=0 plane with +z normals, area size^2."""
    s = size / 2.0
    v = np.array([[-s, -s, 0], [s, -s, 0], [s, s, 0], [-s, s, 0]], dtype=float)
    f = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(v, f)


def grid(nx: int, ny: int, sx: float = 1.0, sy: float = 1.0) -> Mesh:
    """Open rectangular grid in the z=0 plane, 2*nx*ny faces, +z normals."""
    xs = np.linspace(-sx / 2, sx / 2, nx + 1)
    ys = np.linspace(-sy / 2, sy / 2, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    v = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
    faces = []
    for i in range(nx):
        for j in range(ny):
            a = i * (ny + 1) + j
            b = (i + 1) * (ny + 1) + j
            faces.append([a, b, b + 1])
            faces.append([a, b + 1, a + 1])
    return Mesh(v, np.array(faces))


def tetrahedron() -> Mesh:
    v = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float
    )
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Mesh(v, f)


def octahedron() -> Mesh:
    v = np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
        dtype=float,
    )
    f = np.array(
        [
            [0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
            [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5],
        ]
    )
    return Mesh(v, f)


def icosahedron() -> Mesh:
    phi = (1 + 5**0.5) / 2
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    v /= np.linalg.norm(v[0])
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return Mesh(v, f)


def icosphere(subdivisions: int = 3) -> Mesh:
    """Unit icosphere; 20 * 4^subdivisions faces."""
    mesh = icosahedron()
    v = [list(p) for p in mesh.vertices]
    faces = mesh.faces
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                p = np.array(v[a]) + np.array(v[b])
                p /= np.linalg.norm(p)
                cache[key] = len(v)
                v.append(list(p))
            return cache[key]

        out = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            out.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]])
        faces = np.array(out)
    return Mesh(np.array(v), faces)


def cube_grid(n: int = 4) -> Mesh:
    """Closed unit cube with an n x n triangulated grid per side (12 n^2 faces)."""
    step = 1.0 / n
    verts: list[tuple[float, float, float]] = []
    vid: dict[tuple[int, int, int], int] = {}

    def vert(i: int, j: int, k: int) -> int:
        key = (i, j, k)
        if key not in vid:
            vid[key] = len(verts)
            verts.append((i * step - 0.5, j * step - 0.5, k * step - 0.5))
        return vid[key]

    faces = []

    def quad(a, b, c, d):
        faces.append([a, b, c])
        faces.append([a, c, d])

    for i in range(n):
        for j in range(n):
            # z = +0.5 (normal +z) and z = -0.5 (normal -z)
            quad(vert(i, j, n), vert(i + 1, j, n), vert(i + 1, j + 1, n), vert(i, j + 1, n))
            quad(vert(i, j, 0), vert(i, j + 1, 0), vert(i + 1, j + 1, 0), vert(i + 1, j, 0))
            # y faces
            quad(vert(i, n, j), vert(i, n, j + 1), vert(i + 1, n, j + 1), vert(i + 1, n, j))
            quad(vert(i, 0, j), vert(i + 1, 0, j), vert(i + 1, 0, j + 1), vert(i, 0, j + 1))
            # x faces
            quad(vert(n, i, j), vert(n, i + 1, j), vert(n, i + 1, j + 1), vert(n, i, j + 1))
            quad(vert(0, i, j), vert(0, i, j + 1), vert(0, i + 1, j + 1), vert(0, i + 1, j))
    return Mesh(np.array(verts, dtype=float), np.array(faces))


def bent_ridge(n: int = 8, bend: float = 0.35) -> Mesh:
    """Open grid folded into a shallow tent ridge along x = 0.

    The ridge line carries a deliberate kink so midpoint edge splits have
    something to smooth out.
    """
    mesh = grid(n, n, 2.0, 2.0)
    v = mesh.vertices.copy()
    v[:, 2] = bend * (1.0 - np.abs(v[:, 0]))
    # kink the ridge: shift alternate ridge vertices sideways
    on_ridge = np.abs(v[:, 0]) < 1e-9
    v[on_ridge, 2] += 0.1 * bend * np.sign(np.sin(7.0 * v[on_ridge, 1]) + 0.3)
    return Mesh(v, mesh.faces)


def normalized(mesh: Mesh, diagonal: float = 3.0) -> Mesh:
    return normalize_scale(mesh, diagonal)
