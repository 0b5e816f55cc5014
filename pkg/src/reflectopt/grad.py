"""Derivatives of the reflectivity energy with respect to target face normals.

The shading normals T are a fictitious per-face variable: they replace the
geometric normal in every BRDF and cosine factor, while ray intersection and
path sampling stay on the true geometry. With sampling detached from T, the
pathwise derivative of the estimator under common random numbers equals the
adjoint accumulated here, which makes finite-difference verification exact
up to O(h^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .energy import ReflectivitySpec, sample_face_points
from .trace import EPS_RAY, PhongParams, PhongScene


@dataclass(frozen=True)
class TargetNormals:
    """Per-face unit target normals, the optimization variable."""

    normals: np.ndarray

    def __post_init__(self):
        n = np.ascontiguousarray(np.asarray(self.normals, dtype=np.float64))
        lengths = np.linalg.norm(n, axis=1)
        if not np.allclose(lengths, 1.0, atol=1e-9):
            raise ValueError("target normals must be unit length")
        object.__setattr__(self, "normals", n)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "TargetNormals":
        arr = np.asarray(arr, dtype=float)
        return cls(arr / np.linalg.norm(arr, axis=1, keepdims=True))

    def __len__(self) -> int:
        return len(self.normals)


class GradientBuffer:
    """Per-face 3D gradient accumulators with a sample counter."""

    def __init__(self, num_faces: int):
        self.values = np.zeros((num_faces, 3))
        self.face_energy = np.zeros(num_faces)
        self.samples = 0

    def check_finite(self):
        if not np.isfinite(self.values).all():
            raise FloatingPointError("non-finite gradient entries")


def tangent_project(vectors: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Remove the component of each vector along its (unit) normal."""
    return vectors - (vectors * normals).sum(axis=1, keepdims=True) * normals


def phong_normal_derivative(brdf: PhongParams, normal, w_o, w_i) -> np.ndarray:
    """Analytic d f / d normal, tangent-projected at `normal`.

    Zero outside the hemisphere and in the clamped lobe region.
    """
    t = np.asarray(normal, dtype=float)
    wo = np.asarray(w_o, dtype=float)
    wi = np.asarray(w_i, dtype=float)
    to = float(t @ wo)
    ti = float(t @ wi)
    if to <= 0.0 or ti <= 0.0:
        return np.zeros(3)
    c = 2.0 * to * ti - float(wo @ wi)
    if c <= 0.0 or c >= 1.0:
        return np.zeros(3)
    dspec = brdf.k_s * (brdf.n_exp + 2.0) * brdf.n_exp / (2.0 * np.pi) * c ** (brdf.n_exp - 1.0)
    dc = 2.0 * (ti * wo + to * wi)
    g = dspec * dc
    return g - (g @ t) * t


def radiance_adjoint(
    scene: PhongScene,
    T: TargetNormals,
    p,
    face: int,
    w_o,
    w_l,
    adjoint_weight: float,
    seed: int,
    out: GradientBuffer,
    n_path: int = 8,
) -> float:
    """Accumulate adjoint_weight * dL/dT into `out` for all touched faces.

    Returns the primal radiance estimate along the same sampled paths
    (continuous transport component only).
    """
    p = np.asarray(p, dtype=float)
    w_o = np.asarray(w_o, dtype=float)
    w_l = np.asarray(w_l, dtype=float)
    raw = np.zeros_like(out.values)
    L = K.radiance_adjoint_single(
        *scene.bvh_args(),
        scene.normals, T.normals,
        p[0], p[1], p[2], face,
        w_o[0], w_o[1], w_o[2], w_l[0], w_l[1], w_l[2],
        scene.brdf.k_d, scene.brdf.k_s, scene.brdf.n_exp,
        scene.emitter_radiance, n_path,
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF), EPS_RAY,
        float(adjoint_weight), raw,
    )
    out.values += tangent_project(raw, T.normals)
    out.samples += n_path
    return float(L)


def energy_gradient(
    scene: PhongScene,
    spec: ReflectivitySpec,
    T: TargetNormals,
    seed: int,
    n_dir: int = 16,
    n_path: int = 8,
    iteration: int = 0,
) -> tuple[float, GradientBuffer]:
    """Monte Carlo estimate of (E, dE/dT), tangent-projected per face."""
    if n_dir < 1 or n_path < 1:
        raise ValueError("n_dir and n_path must be >= 1")
    F = scene.mesh.num_faces
    if len(T) != F:
        raise ValueError("target normal count does not match face count")
    c_pts = sample_face_points(scene, seed, iteration)
    loss_mode, tmode, qa, qb, l_star, eps = spec.kernel_args()
    band_axis, band_sin_t0, band_fixed = scene.band.kernel_args()
    face_energy = np.zeros(F)
    grad_self = np.zeros((F, 3))
    bounce_face = np.full(F * n_dir * n_path, -1, dtype=np.int64)
    bounce_grad = np.zeros((F * n_dir * n_path, 3))
    K.energy_grad_pass(
        *scene.bvh_args(),
        scene.normals, T.normals, scene.areas, c_pts,
        scene.brdf.k_d, scene.brdf.k_s, scene.brdf.n_exp, scene.emitter_radiance,
        band_axis, band_sin_t0, band_fixed,
        loss_mode, tmode, qa, qb, l_star, eps,
        n_dir, n_path,
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(iteration),
        True, EPS_RAY,
        face_energy, grad_self, bounce_face, bounce_grad,
    )
    # deterministic serial reduction of bounce contributions (fixed slot order)
    valid = bounce_face >= 0
    np.add.at(grad_self, bounce_face[valid], bounce_grad[valid])
    out = GradientBuffer(F)
    out.values = tangent_project(grad_self, T.normals)
    out.face_energy = face_energy
    out.samples = n_dir * n_path
    out.check_finite()
    return float(face_energy.sum()), out


def regularized_step(
    T: TargetNormals,
    G: GradientBuffer,
    reference_normals: np.ndarray,
    eta: float,
    beta: float,
    face_areas: np.ndarray,
) -> TargetNormals:
    """One descent step with the soft pull toward the original face normals.

    t_k <- normalize(t_k - eta * (G_k + beta * A_k * (t_k - n_k))).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    t = T.normals
    step = G.values + beta * face_areas[:, None] * (t - reference_normals)
    new = t - eta * step
    norms = np.linalg.norm(new, axis=1)
    if (norms < 1e-12).any():
        raise ValueError("step collapsed a target normal to zero (eta too large)")
    return TargetNormals(new / norms[:, None])
