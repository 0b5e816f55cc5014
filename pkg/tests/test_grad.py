"""Normal-space derivatives: analytic BRDF gradient, adjoint, descent step."""

import numpy as np
import pytest

from reflectopt import shapes
from reflectopt.energy import ReflectivitySpec, total_energy
from reflectopt.geom import Mesh, face_areas, face_normals
from reflectopt.grad import (
    GradientBuffer,
    TargetNormals,
    energy_gradient,
    phong_normal_derivative,
    radiance_adjoint,
    regularized_step,
    tangent_project,
)
from reflectopt.trace import (
    DirectionalBand,
    PhongParams,
    build_scene,
    eval_phong,
    radiance,
)

STEALTH = ReflectivitySpec()
MIRROR_BRDF = PhongParams(k_d=0.0, k_s=1.0, n_exp=30.0)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def hemisphere_dir(rng):
    d = unit(rng.normal(size=3))
    d[2] = abs(d[2]) + 0.05
    return unit(d)


# ------------------------------------------------------------- target normals


def test_target_normals_validation():
    with pytest.raises(ValueError):
        TargetNormals(np.array([[1.0, 1.0, 0.0]]))
    t = TargetNormals.from_array(np.array([[2.0, 0.0, 0.0], [0.0, 0.0, -3.0]]))
    assert np.allclose(np.linalg.norm(t.normals, axis=1), 1.0)
    assert len(t) == 2


def test_tangent_project():
    n = np.array([[0.0, 0.0, 1.0]])
    v = np.array([[1.0, 2.0, 3.0]])
    assert np.allclose(tangent_project(v, n), [[1.0, 2.0, 0.0]])


# --------------------------------------------------- analytic BRDF derivative


def test_phong_normal_derivative_fd(rng):
    brdf = PhongParams()
    worst = 0.0
    checked = 0
    for _ in range(100):
        n = hemisphere_dir(rng)
        wo = hemisphere_dir(rng)
        # bias wi toward the mirror of wo so the specular lobe is active
        mirror = 2 * (n @ wo) * n - wo
        wi = unit(mirror + 0.3 * rng.normal(size=3))
        if wi @ n <= 0:
            continue
        g = phong_normal_derivative(brdf, n, wo, wi)
        if np.linalg.norm(g) < 1e-8:
            continue
        checked += 1
        h = 1e-5
        fd = np.zeros(3)
        for c in range(3):
            d = np.zeros(3)
            d[c] = h
            fp = eval_phong(brdf, unit(n + d), wo, wi)
            fm = eval_phong(brdf, unit(n - d), wo, wi)
            fd[c] = (fp - fm) / (2 * h)
        fd = tangent_project(fd[None], n[None])[0]
        worst = max(worst, np.linalg.norm(fd - g) / np.linalg.norm(g))
    assert checked > 30
    assert worst < 1e-4


def test_phong_normal_derivative_pure_diffuse():
    brdf = PhongParams(k_d=0.3, k_s=0.0)
    g = phong_normal_derivative(brdf, unit((0, 0, 1)), unit((1, 0, 1)), unit((0, 1, 1)))
    assert np.allclose(g, 0.0)


def test_phong_normal_derivative_clamp_region():
    # opposing directions: cos(alpha) < 0, specular lobe clamped
    n = unit((0, 0, 1))
    g = phong_normal_derivative(MIRROR_BRDF, n, unit((1, 0, 0.1)), unit((-1, 0, 0.1)))
    assert np.allclose(g, 0.0)


def test_phong_normal_derivative_tangent():
    n = unit((0.2, -0.1, 1.0))
    g = phong_normal_derivative(PhongParams(), n, unit((0.5, 0, 1)), unit((-0.3, 0.2, 1)))
    assert abs(g @ n) < 1e-12


# ------------------------------------------------------------ radiance adjoint


def test_adjoint_single_plate_direct_fd():
    scene = build_scene(
        shapes.plate(), MIRROR_BRDF, DirectionalBand.single((0, 0, 1)), 1.0
    )
    w = unit((0.15, -0.1, 1.0))
    p = np.array([0.05, 0.02, 0.0])
    T = TargetNormals(face_normals(scene.mesh))
    out = GradientBuffer(2)
    radiance_adjoint(scene, T, p, 0, w, w, adjoint_weight=1.0, seed=4, out=out)
    h = 1e-6
    for c in range(3):
        d = np.zeros(3)
        d[c] = h
        tp = (T.normals + d) / np.linalg.norm(T.normals + d, axis=1, keepdims=True)
        tm = (T.normals - d) / np.linalg.norm(T.normals - d, axis=1, keepdims=True)
        Lp = radiance(scene, p, 0, w, w, seed=4, shading_normals=tp)
        Lm = radiance(scene, p, 0, w, w, seed=4, shading_normals=tm)
        fd = (Lp - Lm) / (2 * h)
        assert fd == pytest.approx(out.values[0, c], rel=1e-3, abs=1e-8)


def test_adjoint_zero_weight():
    scene = build_scene(
        shapes.plate(), MIRROR_BRDF, DirectionalBand.single((0, 0, 1)), 1.0
    )
    T = TargetNormals(face_normals(scene.mesh))
    out = GradientBuffer(2)
    w = unit((0, 0, 1))
    radiance_adjoint(scene, T, np.array([0.05, 0.05, 0.0]), 0, w, w, 0.0, 4, out)
    assert np.allclose(out.values, 0.0)


def test_adjoint_interreflection_touches_hidden_plate():
    # a lit lower plate and a tilted upper reflector: perturbing the upper
    # plate's shading normal changes the lower plate's retro radiance
    lower = shapes.plate(2.0)
    upper = shapes.plate(2.0)
    # rotate the upper plate's +z normal to (sin 120, 0, cos 120): it leans
    # over the mirror lobe of the lower plate and is lit by the tilted light
    tilt = np.deg2rad(120.0)
    c, s = np.cos(tilt), np.sin(tilt)
    R = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    upper_v = upper.vertices @ R.T + np.array([-1.4, 0.0, 1.5])
    v = np.vstack([lower.vertices, upper_v])
    f = np.vstack([lower.faces, upper.faces + 4])
    mesh = Mesh(v, f)
    w_l = unit((1.0, 0.0, 1.0))
    scene = build_scene(mesh, PhongParams(), DirectionalBand.single(w_l), 1.0)
    T = TargetNormals(face_normals(mesh))
    out = GradientBuffer(4)
    p = np.array([0.1, 0.0, 0.0])
    for s_ in range(64):
        radiance_adjoint(scene, T, p, 0, w_l, w_l, 1.0, s_, out, n_path=8)
    assert np.linalg.norm(out.values[0]) > 0  # the shaded face itself
    assert np.linalg.norm(out.values[2:]) > 0  # the bounce reflector


# -------------------------------------------------------------- energy gradient


def test_energy_gradient_fd_octahedron(octa):
    band = DirectionalBand.single(unit((0.3, 0.2, 1.0)))
    scene = build_scene(octa, PhongParams(), band, 1.0)
    T = TargetNormals(face_normals(octa))
    seed = 12
    E, G = energy_gradient(scene, spec=STEALTH, T=T, seed=seed)
    h = 1e-6
    rel_errs = []
    for k in range(octa.num_faces):
        for c in range(3):
            tp = T.normals.copy()
            tm = T.normals.copy()
            tp[k, c] += h
            tm[k, c] -= h
            tp /= np.linalg.norm(tp, axis=1, keepdims=True)
            tm /= np.linalg.norm(tm, axis=1, keepdims=True)
            Ep = total_energy(scene, STEALTH, seed, T=tp)
            Em = total_energy(scene, STEALTH, seed, T=tm)
            fd = (Ep - Em) / (2 * h)
            if abs(fd) > 1e-7 or abs(G.values[k, c]) > 1e-7:
                rel_errs.append(
                    abs(fd - G.values[k, c]) / max(abs(fd), abs(G.values[k, c]))
                )
    assert rel_errs
    assert max(rel_errs) < 1e-2


def test_energy_gradient_descent_direction():
    # light slightly off-normal: the head-on case is a symmetric stationary
    # point with zero tangent gradient
    scene = build_scene(
        shapes.plate(), MIRROR_BRDF, DirectionalBand.single(unit((0.2, 0, 1))), 1.0
    )
    T = TargetNormals(face_normals(scene.mesh))
    E0, G = energy_gradient(scene, STEALTH, T, seed=0)
    step = 1e-3
    t_new = T.normals - step * G.values
    t_new /= np.linalg.norm(t_new, axis=1, keepdims=True)
    E1 = total_energy(scene, STEALTH, seed=0, T=t_new)
    assert E1 < E0


def test_energy_gradient_backlit_zero():
    scene = build_scene(
        shapes.plate(), MIRROR_BRDF, DirectionalBand.single((0, 0, -1)), 1.0
    )
    T = TargetNormals(face_normals(scene.mesh))
    E, G = energy_gradient(scene, STEALTH, T, seed=0)
    assert E == 0.0
    assert np.allclose(G.values, 0.0)


def test_energy_gradient_count_mismatch(octa):
    scene = build_scene(octa)
    with pytest.raises(ValueError):
        energy_gradient(scene, STEALTH, TargetNormals(np.tile([0.0, 0, 1], (3, 1))), 0)


def test_energy_gradient_tangent(small_sphere):
    scene = build_scene(small_sphere, None, DirectionalBand(), 1.0)
    T = TargetNormals(face_normals(small_sphere))
    _, G = energy_gradient(scene, STEALTH, T, seed=2)
    assert np.abs((G.values * T.normals).sum(axis=1)).max() < 1e-12


def test_energy_gradient_face_energy(octa):
    scene = build_scene(octa, PhongParams(), DirectionalBand.single((0, 0, 1)), 1.0)
    T = TargetNormals(face_normals(octa))
    E, G = energy_gradient(scene, STEALTH, T, seed=0)
    assert E == pytest.approx(G.face_energy.sum())
    assert (G.face_energy >= 0).all()


# ------------------------------------------------------------ regularized step


def test_step_fixed_point(octa):
    T = TargetNormals(face_normals(octa))
    G = GradientBuffer(octa.num_faces)
    out = regularized_step(T, G, T.normals, eta=200.0, beta=0.0, face_areas=face_areas(octa))
    assert np.allclose(out.normals, T.normals)


def test_step_pull_converges_to_reference(octa, rng):
    n_ref = face_normals(octa)
    t = n_ref + 0.3 * rng.normal(size=n_ref.shape)
    T = TargetNormals.from_array(t)
    G = GradientBuffer(octa.num_faces)
    areas = face_areas(octa)
    # contraction requires eta * beta * A < 1
    for _ in range(400):
        T = regularized_step(T, G, n_ref, eta=1.0, beta=0.1, face_areas=areas)
    assert np.abs((T.normals * n_ref).sum(axis=1) - 1.0).max() < 1e-6


def test_step_validation(octa):
    T = TargetNormals(face_normals(octa))
    G = GradientBuffer(octa.num_faces)
    with pytest.raises(ValueError):
        regularized_step(T, G, T.normals, eta=0.0, beta=0.1, face_areas=face_areas(octa))
    with pytest.raises(ValueError):
        regularized_step(T, G, T.normals, eta=1.0, beta=-0.1, face_areas=face_areas(octa))


def test_step_rejects_collapse(octa):
    T = TargetNormals(face_normals(octa))
    G = GradientBuffer(octa.num_faces)
    # a gradient exactly along t with magnitude 1/eta zeroes the update
    G.values = T.normals / 200.0
    with pytest.raises(ValueError):
        regularized_step(T, G, T.normals, eta=200.0, beta=0.0, face_areas=face_areas(octa))
