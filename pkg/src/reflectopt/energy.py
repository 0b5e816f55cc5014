"""Reflectivity objectives: target directions, pointwise losses, total energy.

Three objective kinds share one machinery: driving retro radiance to zero
(stealth), maximizing radiance delivered toward a point/segment target, and
deflecting radiance away from a point.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels as K
from .trace import EPS_RAY, PhongScene


class EnergyKind(str, Enum):
    STEALTH = "stealth"
    MAXIMIZE_TOWARD_TARGET = "maximize_toward_target"
    DEFLECT_FROM_POINT = "deflect_from_point"


@dataclass(frozen=True)
class ReflectivitySpec:
    """The reflectivity energy family.

    target_geometry: None for stealth (retro direction), a point (3,), or a
    segment ((3,), (3,)). For MAXIMIZE_TOWARD_TARGET the loss is
    1/(L + epsilon) unless l_star > 0, in which case the L2-to-constant
    variant 0.5 (L* - L)^2 is used.
    """

    kind: EnergyKind = EnergyKind.STEALTH
    target_geometry: tuple | None = None
    l_star: float = 0.0
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.kind == EnergyKind.STEALTH:
            if self.l_star != 0.0:
                raise ValueError("stealth requires l_star = 0")
        elif self.target_geometry is None:
            raise ValueError(f"{self.kind.value} requires target geometry")
        if self.kind == EnergyKind.MAXIMIZE_TOWARD_TARGET and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def kernel_args(self):
        """(loss_mode, target_mode, target_a, target_b, l_star, epsilon)."""
        if self.kind == EnergyKind.STEALTH:
            loss = K.LOSS_HALF_SQ
            tmode = K.TARGET_RETRO
            qa = qb = np.zeros(3)
        elif self.kind == EnergyKind.DEFLECT_FROM_POINT:
            loss = K.LOSS_HALF_SQ
            tmode = K.TARGET_POINT
            qa = np.asarray(self.target_geometry, dtype=float).reshape(3)
            qb = qa
        else:
            loss = K.LOSS_L2_TARGET if self.l_star > 0 else K.LOSS_RECIPROCAL
            tg = self.target_geometry
            if isinstance(tg, tuple) and len(tg) == 2 and np.shape(tg[0]) == (3,):
                tmode = K.TARGET_SEGMENT
                qa = np.asarray(tg[0], dtype=float)
                qb = np.asarray(tg[1], dtype=float)
            else:
                tmode = K.TARGET_POINT
                qa = np.asarray(tg, dtype=float).reshape(3)
                qb = qa
        return loss, tmode, qa, qb, float(self.l_star), float(self.epsilon)


def target_direction(spec: ReflectivitySpec, p, w_l) -> np.ndarray:
    """Target outgoing direction at point p for incident light direction w_l."""
    p = np.asarray(p, dtype=float)
    w_l = np.asarray(w_l, dtype=float)
    _, tmode, qa, qb, _, _ = spec.kernel_args()
    if tmode != K.TARGET_RETRO:
        if tmode == K.TARGET_POINT:
            closest = qa
        else:
            d = qb - qa
            s = np.clip(np.dot(p - qa, d) / max(np.dot(d, d), 1e-300), 0.0, 1.0)
            closest = qa + s * d
        if np.linalg.norm(closest - p) < 1e-9:
            raise ValueError("point coincides with target geometry")
    dx, dy, dz = K._target_dir(tmode, p[0], p[1], p[2], w_l[0], w_l[1], w_l[2], qa, qb)
    return np.array([dx, dy, dz])


def pointwise_loss(spec: ReflectivitySpec, L: float) -> tuple[float, float]:
    """(loss, dloss/dL) at radiance L >= 0."""
    loss_mode, _, _, _, l_star, eps = spec.kernel_args()
    v, d = K._loss(loss_mode, float(L), l_star, eps)
    return float(v), float(d)


def sample_face_points(scene: PhongScene, seed: int, iteration: int = 0) -> np.ndarray:
    """One uniformly random point per face (fresh per evaluation pass)."""
    rng = np.random.default_rng([seed & 0x7FFFFFFF, iteration, 0xC0FFEE])
    u = rng.random((scene.mesh.num_faces, 2))
    flip = u.sum(axis=1) > 1.0
    u[flip] = 1.0 - u[flip]
    return scene.v0 + u[:, :1] * scene.e1 + u[:, 1:] * scene.e2


def per_face_energy(
    scene: PhongScene,
    spec: ReflectivitySpec,
    seed: int,
    T: np.ndarray | None = None,
    n_dir: int = 16,
    n_path: int = 8,
    iteration: int = 0,
) -> np.ndarray:
    """Per-face energy contributions A_k / N_dir * sum_i loss(L) * V."""
    if n_dir < 1:
        raise ValueError("n_dir must be >= 1")
    if n_path < 1:
        raise ValueError("n_path must be >= 1")
    F = scene.mesh.num_faces
    t_shade = scene.normals if T is None else np.ascontiguousarray(T)
    c_pts = sample_face_points(scene, seed, iteration)
    loss_mode, tmode, qa, qb, l_star, eps = spec.kernel_args()
    band_axis, band_sin_t0, band_fixed = scene.band.kernel_args()
    face_energy = np.zeros(F)
    bounce_face = np.full(F * n_dir * n_path, -1, dtype=np.int64)
    bounce_grad = np.zeros((F * n_dir * n_path, 3))
    K.energy_grad_pass(
        *scene.bvh_args(),
        scene.normals, t_shade, scene.areas, c_pts,
        scene.brdf.k_d, scene.brdf.k_s, scene.brdf.n_exp, scene.emitter_radiance,
        band_axis, band_sin_t0, band_fixed,
        loss_mode, tmode, qa, qb, l_star, eps,
        n_dir, n_path,
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(iteration),
        False, EPS_RAY,
        face_energy, np.zeros((F, 3)), bounce_face, bounce_grad,
    )
    return face_energy


def total_energy(
    scene: PhongScene,
    spec: ReflectivitySpec,
    seed: int,
    T: np.ndarray | None = None,
    n_dir: int = 16,
    n_path: int = 8,
    iteration: int = 0,
) -> float:
    """Monte Carlo estimate of the area-integrated reflectivity energy."""
    return float(
        per_face_energy(scene, spec, seed, T, n_dir, n_path, iteration).sum()
    )
