"""Forward light transport: scene setup, BVH ray casting, Phong shading.

The scene couples a mesh with a Phong BRDF and a directional emitter band.
Radiance is estimated up to the first indirect bounce with a delta
directional light, so the direct term is deterministic and the analytic
flat-plate oracle is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .geom import Mesh, face_areas, face_normals

EPS_RAY = 1e-5
LEAF_SIZE = 4


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class PhongParams:
    """Phong lobe weights and exponent; k_d + k_s <= 1 for energy conservation."""

    k_d: float = 0.1
    k_s: float = 0.9
    n_exp: float = 30.0

    def __post_init__(self):
        if self.k_d < 0 or self.k_s < 0:
            raise ValueError("lobe weights must be non-negative")
        if self.k_d + self.k_s > 1.0 + 1e-12:
            raise ValueError("k_d + k_s must not exceed 1")
        if self.n_exp <= 0:
            raise ValueError("Phong exponent must be positive")


@dataclass(frozen=True)
class DirectionalBand:
    """Elevation band of light directions about an up axis.

    theta0 is the half-angle of the band; directions are drawn uniformly by
    solid angle from {|elevation| <= theta0, full azimuth}. A degenerate
    single-direction emitter (used by oracles and tests) is expressed with
    fixed_direction set; theta0 is then ignored for sampling.
    """

    theta0: float = np.deg2rad(20.0)
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    fixed_direction: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.fixed_direction is None and not (0.0 < self.theta0 <= np.pi / 2 + 1e-12):
            raise ValueError("theta0 must lie in (0, pi/2]")
        a = np.asarray(self.axis, dtype=float)
        object.__setattr__(self, "axis", tuple(a / np.linalg.norm(a)))
        if self.fixed_direction is not None:
            d = np.asarray(self.fixed_direction, dtype=float)
            object.__setattr__(self, "fixed_direction", tuple(d / np.linalg.norm(d)))

    @classmethod
    def single(cls, direction) -> "DirectionalBand":
        """Degenerate band: every sample returns `direction`."""
        return cls(theta0=np.deg2rad(20.0), axis=direction, fixed_direction=direction)

    def kernel_args(self):
        if self.fixed_direction is not None:
            return np.asarray(self.fixed_direction, dtype=float), 0.0, True
        return np.asarray(self.axis, dtype=float), float(np.sin(self.theta0)), False


@dataclass(frozen=True)
class RaySample:
    origin: np.ndarray
    direction: np.ndarray
    face_skip: int = -1

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction", d)


def _build_bvh(v0, e1, e2):
    """Median-split BVH over triangles; flat arrays for the traversal kernels."""
    F = v0.shape[0]
    tmin = np.minimum(np.minimum(v0, v0 + e1), v0 + e2)
    tmax = np.maximum(np.maximum(v0, v0 + e1), v0 + e2)
    cent = 0.5 * (tmin + tmax)
    order = np.arange(F, dtype=np.int64)
    max_nodes = 2 * F + 1
    bmin = np.empty((max_nodes, 3))
    bmax = np.empty((max_nodes, 3))
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    count = np.zeros(max_nodes, dtype=np.int64)
    n_nodes = 1
    stack = [(0, 0, F)]
    while stack:
        node, lo, hi = stack.pop()
        idx = order[lo:hi]
        bmin[node] = tmin[idx].min(axis=0)
        bmax[node] = tmax[idx].max(axis=0)
        if hi - lo <= LEAF_SIZE:
            start[node] = lo
            count[node] = hi - lo
            continue
        ext = bmax[node] - bmin[node]
        axis = int(np.argmax(ext))
        keys = cent[idx, axis]
        perm = np.argsort(keys, kind="stable")
        order[lo:hi] = idx[perm]
        mid = (lo + hi) // 2
        lc, rc = n_nodes, n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        stack.append((lc, lo, mid))
        stack.append((rc, mid, hi))
    return (
        bmin[:n_nodes].copy(),
        bmax[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        start[:n_nodes].copy(),
        count[:n_nodes].copy(),
        order,
    )


@dataclass(frozen=True)
class PhongScene:
    """Immutable scene: mesh + BRDF + directional band + BVH accelerator."""

    mesh: Mesh
    brdf: PhongParams
    band: DirectionalBand
    emitter_radiance: float
    v0: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    e1: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    e2: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    normals: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    areas: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    bvh: tuple = field(repr=False, default=None)  # type: ignore[assignment]

    def bvh_args(self):
        return (self.v0, self.e1, self.e2) + self.bvh


def build_scene(
    mesh: Mesh,
    brdf: PhongParams | None = None,
    band: DirectionalBand | None = None,
    emitter_radiance: float = 1.0,
) -> PhongScene:
    if mesh.num_faces == 0:
        raise SceneError("empty mesh")
    brdf = brdf or PhongParams()
    band = band or DirectionalBand()
    v = mesh.vertices
    f = mesh.faces
    v0 = np.ascontiguousarray(v[f[:, 0]])
    e1 = np.ascontiguousarray(v[f[:, 1]] - v[f[:, 0]])
    e2 = np.ascontiguousarray(v[f[:, 2]] - v[f[:, 0]])
    return PhongScene(
        mesh=mesh,
        brdf=brdf,
        band=band,
        emitter_radiance=float(emitter_radiance),
        v0=v0,
        e1=e1,
        e2=e2,
        normals=face_normals(mesh),
        areas=face_areas(mesh),
        bvh=_build_bvh(v0, e1, e2),
    )


def intersect(scene: PhongScene, ray: RaySample):
    """Nearest hit beyond EPS_RAY or None; returns (face, point, distance)."""
    o, d = ray.origin, ray.direction
    f, t = K.bvh_nearest(
        o[0], o[1], o[2], d[0], d[1], d[2], ray.face_skip, EPS_RAY, *scene.bvh_args()
    )
    if f < 0:
        return None
    return int(f), o + t * d, float(t)


def intersect_brute(scene: PhongScene, ray: RaySample):
    """Reference nearest-hit by exhaustive triangle iteration (test oracle)."""
    o, d = ray.origin, ray.direction
    best = None
    for f in range(scene.mesh.num_faces):
        if f == ray.face_skip:
            continue
        t = K._tri_hit(
            o[0], o[1], o[2], d[0], d[1], d[2], scene.v0, scene.e1, scene.e2, f
        )
        if t > EPS_RAY and (best is None or t < best[2]):
            best = (f, o + t * d, float(t))
    return best


def visibility(scene: PhongScene, p, w, face_skip: int) -> int:
    """1 iff the shadow ray from p in direction w escapes the scene."""
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    hit = K.bvh_anyhit(
        p[0], p[1], p[2], w[0], w[1], w[2], face_skip, EPS_RAY, *scene.bvh_args()
    )
    return 0 if hit else 1


def eval_phong(brdf: PhongParams, normal, w_o, w_i) -> float:
    """Phong BRDF value; zero outside the normal's hemisphere."""
    n = np.asarray(normal, dtype=float)
    a = np.asarray(w_o, dtype=float)
    b = np.asarray(w_i, dtype=float)
    return float(
        K._phong_f(
            brdf.k_d, brdf.k_s, brdf.n_exp,
            n[0], n[1], n[2], a[0], a[1], a[2], b[0], b[1], b[2],
        )
    )


def sample_phong(brdf: PhongParams, normal, w_o, seed: int):
    """Draw one BSDF direction; returns (w_i, pdf of the mixture)."""
    n = np.asarray(normal, dtype=float)
    a = np.asarray(w_o, dtype=float)
    wx, wy, wz, pdf = K.sample_phong_one(
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
        brdf.k_d, brdf.k_s, brdf.n_exp,
        n[0], n[1], n[2], a[0], a[1], a[2],
    )
    return np.array([wx, wy, wz]), float(pdf)


def sample_band(band: DirectionalBand, seed: int) -> np.ndarray:
    """One light direction, uniform by solid angle on the band."""
    axis, sin_t0, fixed = band.kernel_args()
    if fixed:
        return axis.copy()
    wx, wy, wz = K.sample_band_one(
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF), axis[0], axis[1], axis[2], sin_t0
    )
    return np.array([wx, wy, wz])


def radiance(
    scene: PhongScene,
    p,
    face: int,
    w_o,
    w_l,
    seed: int,
    n_path: int = 8,
    shading_normals: np.ndarray | None = None,
) -> float:
    """Unbiased direct + one-indirect-bounce radiance estimate at p on `face`."""
    p = np.asarray(p, dtype=float)
    w_o = np.asarray(w_o, dtype=float)
    w_l = np.asarray(w_l, dtype=float)
    t_shade = scene.normals if shading_normals is None else shading_normals
    return float(
        K.radiance_single(
            *scene.bvh_args(),
            scene.normals, np.ascontiguousarray(t_shade),
            p[0], p[1], p[2], face,
            w_o[0], w_o[1], w_o[2], w_l[0], w_l[1], w_l[2],
            scene.brdf.k_d, scene.brdf.k_s, scene.brdf.n_exp,
            scene.emitter_radiance, n_path,
            np.uint64(seed & 0xFFFFFFFFFFFFFFFF), EPS_RAY,
        )
    )
