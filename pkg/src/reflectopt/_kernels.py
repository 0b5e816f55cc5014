"""Numba-compiled ray tracing and gradient-estimation kernels.

Everything here operates on flat numpy arrays so the hot loops stay in
nopython mode. The per-face RNG is counter-based (splitmix64 streams keyed
by seed/face/iteration), which makes results reproducible independent of
scheduling and enables common-random-number finite differencing.
"""

from __future__ import annotations

import numpy as np
import numba
from numba import njit, prange

# portable threading layer; results are thread-count independent by design
numba.config.THREADING_LAYER = "workqueue"

MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
INV53 = 1.0 / 9007199254740992.0

LOSS_HALF_SQ = 0
LOSS_L2_TARGET = 1
LOSS_RECIPROCAL = 2

TARGET_RETRO = 0
TARGET_POINT = 1
TARGET_SEGMENT = 2


# ---------------------------------------------------------------------------
# RNG: splitmix64 streams

@njit(cache=True, inline="always")
def _mix64(z):
    z = (z + np.uint64(0x9E3779B97F4A7C15)) & MASK64
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & MASK64
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & MASK64
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _stream_init(seed, face, iteration):
    s = _mix64(np.uint64(seed) ^ np.uint64(0xA076_1D64_78BD_642F))
    s = _mix64(s ^ (np.uint64(face) * np.uint64(0xE703_7ED1_A0B4_28DB)))
    s = _mix64(s ^ (np.uint64(iteration) * np.uint64(0x8EBC_6AF0_9C88_C6E3)))
    return s


@njit(cache=True, inline="always")
def _next_u64(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & MASK64
    return state, _mix64(state)


@njit(cache=True, inline="always")
def _next_unit(state):
    state, x = _next_u64(state)
    return state, float(x >> np.uint64(11)) * INV53


# ---------------------------------------------------------------------------
# Small vector helpers

@njit(cache=True, inline="always")
def _dot(ax, ay, az, bx, by, bz):
    return ax * bx + ay * by + az * bz


@njit(cache=True, inline="always")
def _cross(ax, ay, az, bx, by, bz):
    return ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx


@njit(cache=True, inline="always")
def _normalize(x, y, z):
    n = np.sqrt(x * x + y * y + z * z)
    if n < 1e-300:
        return 0.0, 0.0, 0.0
    return x / n, y / n, z / n


@njit(cache=True, inline="always")
def _ortho_frame(nx, ny, nz):
    # branchless-ish tangent frame around a unit vector
    if abs(nz) < 0.999:
        ux, uy, uz = _cross(0.0, 0.0, 1.0, nx, ny, nz)
    else:
        ux, uy, uz = _cross(1.0, 0.0, 0.0, nx, ny, nz)
    ux, uy, uz = _normalize(ux, uy, uz)
    vx, vy, vz = _cross(nx, ny, nz, ux, uy, uz)
    return ux, uy, uz, vx, vy, vz


# ---------------------------------------------------------------------------
# Ray / triangle / BVH

@njit(cache=True, inline="always")
def _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, f):
    """Moeller-Trumbore; returns t > 0 on hit, -1 otherwise."""
    px, py, pz = _cross(dx, dy, dz, e2[f, 0], e2[f, 1], e2[f, 2])
    det = _dot(e1[f, 0], e1[f, 1], e1[f, 2], px, py, pz)
    if abs(det) < 1e-14:
        return -1.0
    inv = 1.0 / det
    tx = ox - v0[f, 0]
    ty = oy - v0[f, 1]
    tz = oz - v0[f, 2]
    u = _dot(tx, ty, tz, px, py, pz) * inv
    if u < -1e-12 or u > 1.0 + 1e-12:
        return -1.0
    qx, qy, qz = _cross(tx, ty, tz, e1[f, 0], e1[f, 1], e1[f, 2])
    v = _dot(dx, dy, dz, qx, qy, qz) * inv
    if v < -1e-12 or u + v > 1.0 + 1e-12:
        return -1.0
    return _dot(e2[f, 0], e2[f, 1], e2[f, 2], qx, qy, qz) * inv


@njit(cache=True, inline="always")
def _box_hit(ox, oy, oz, ix, iy, iz, bmin, bmax, node, tmax):
    t0 = (bmin[node, 0] - ox) * ix
    t1 = (bmax[node, 0] - ox) * ix
    tn = min(t0, t1)
    tf = max(t0, t1)
    t0 = (bmin[node, 1] - oy) * iy
    t1 = (bmax[node, 1] - oy) * iy
    tn = max(tn, min(t0, t1))
    tf = min(tf, max(t0, t1))
    t0 = (bmin[node, 2] - oz) * iz
    t1 = (bmax[node, 2] - oz) * iz
    tn = max(tn, min(t0, t1))
    tf = min(tf, max(t0, t1))
    return tf >= tn and tf > 0.0 and tn < tmax


@njit(cache=True)
def bvh_nearest(ox, oy, oz, dx, dy, dz, skip, eps_ray,
                v0, e1, e2, bmin, bmax, left, right, start, count, order):
    """Nearest hit beyond eps_ray; returns (face, t) or (-1, inf)."""
    ix = 1.0 / dx if abs(dx) > 1e-300 else 1e300
    iy = 1.0 / dy if abs(dy) > 1e-300 else 1e300
    iz = 1.0 / dz if abs(dz) > 1e-300 else 1e300
    best_f = -1
    best_t = 1e300
    stack = np.empty(128, dtype=np.int64)
    sp = 0
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _box_hit(ox, oy, oz, ix, iy, iz, bmin, bmax, node, best_t):
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                f = order[i]
                if f == skip:
                    continue
                t = _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, f)
                if eps_ray < t < best_t:
                    best_t = t
                    best_f = f
        else:
            stack[sp] = left[node]
            stack[sp + 1] = right[node]
            sp += 2
    return best_f, best_t


@njit(cache=True)
def bvh_anyhit(ox, oy, oz, dx, dy, dz, skip, eps_ray,
               v0, e1, e2, bmin, bmax, left, right, start, count, order):
    """True if any hit beyond eps_ray exists."""
    ix = 1.0 / dx if abs(dx) > 1e-300 else 1e300
    iy = 1.0 / dy if abs(dy) > 1e-300 else 1e300
    iz = 1.0 / dz if abs(dz) > 1e-300 else 1e300
    stack = np.empty(128, dtype=np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _box_hit(ox, oy, oz, ix, iy, iz, bmin, bmax, node, 1e300):
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                f = order[i]
                if f == skip:
                    continue
                t = _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, f)
                if t > eps_ray:
                    return True
        else:
            stack[sp] = left[node]
            stack[sp + 1] = right[node]
            sp += 2
    return False


# ---------------------------------------------------------------------------
# Phong BRDF

@njit(cache=True, inline="always")
def _phong_f(kd, ks, nexp, tx, ty, tz, wox, woy, woz, wix, wiy, wiz):
    """Phong BRDF with shading normal t; 0 outside the t-hemisphere."""
    if _dot(tx, ty, tz, wox, woy, woz) <= 0.0 or _dot(tx, ty, tz, wix, wiy, wiz) <= 0.0:
        return 0.0
    c = 2.0 * _dot(tx, ty, tz, wox, woy, woz) * _dot(tx, ty, tz, wix, wiy, wiz) - _dot(
        wox, woy, woz, wix, wiy, wiz
    )
    if c < 0.0:
        c = 0.0
    elif c > 1.0:
        c = 1.0
    return kd / np.pi + ks * (nexp + 2.0) / (2.0 * np.pi) * c**nexp


@njit(cache=True, inline="always")
def _phong_fcos_grad(kd, ks, nexp, tx, ty, tz, wox, woy, woz, wix, wiy, wiz):
    """Value and normal-derivative of f(t; w_o, w_i) * dot(t, w_i).

    Returns (value, gx, gy, gz); derivative is unprojected (the caller
    removes the component along t once, after accumulation).
    """
    to = _dot(tx, ty, tz, wox, woy, woz)
    ti = _dot(tx, ty, tz, wix, wiy, wiz)
    if to <= 0.0 or ti <= 0.0:
        return 0.0, 0.0, 0.0, 0.0
    c = 2.0 * to * ti - _dot(wox, woy, woz, wix, wiy, wiz)
    fdiff = kd / np.pi
    if c <= 0.0 or c >= 1.0:
        c = min(max(c, 0.0), 1.0)
        spec = ks * (nexp + 2.0) / (2.0 * np.pi) * c**nexp
        f = fdiff + spec
        # clamped specular lobe: zero derivative from the lobe
        return f * ti, f * wix, f * wiy, f * wiz
    spec = ks * (nexp + 2.0) / (2.0 * np.pi) * c**nexp
    f = fdiff + spec
    dspec = ks * (nexp + 2.0) * nexp / (2.0 * np.pi) * c ** (nexp - 1.0)
    dcx = 2.0 * (ti * wox + to * wix)
    dcy = 2.0 * (ti * woy + to * wiy)
    dcz = 2.0 * (ti * woz + to * wiz)
    gx = dspec * dcx * ti + f * wix
    gy = dspec * dcy * ti + f * wiy
    gz = dspec * dcz * ti + f * wiz
    return f * ti, gx, gy, gz


@njit(cache=True, inline="always")
def _phong_pdf(kd, ks, nexp, nx, ny, nz, rx, ry, rz, wx, wy, wz):
    total = kd + ks
    if total <= 0.0:
        return 0.0
    pd = kd / total
    ps = ks / total
    cosn = _dot(nx, ny, nz, wx, wy, wz)
    pdf = 0.0
    if cosn > 0.0:
        pdf += pd * cosn / np.pi
    cosr = _dot(rx, ry, rz, wx, wy, wz)
    if cosr > 0.0:
        pdf += ps * (nexp + 1.0) / (2.0 * np.pi) * cosr**nexp
    return pdf


@njit(cache=True, inline="always")
def _sample_phong(state, kd, ks, nexp, nx, ny, nz, wox, woy, woz):
    """Lafortune-Phong mixture sample around the geometric normal.

    Returns (state, wx, wy, wz, pdf). The lobe is centered on the mirror of
    w_o about (nx, ny, nz).
    """
    rx = 2.0 * _dot(nx, ny, nz, wox, woy, woz) * nx - wox
    ry = 2.0 * _dot(nx, ny, nz, wox, woy, woz) * ny - woy
    rz = 2.0 * _dot(nx, ny, nz, wox, woy, woz) * nz - woz
    total = kd + ks
    state, u0 = _next_unit(state)
    state, u1 = _next_unit(state)
    state, u2 = _next_unit(state)
    if total <= 0.0:
        return state, nx, ny, nz, 0.0
    if u0 < kd / total:
        # cosine-weighted around the normal
        st = np.sqrt(u1)
        ct = np.sqrt(max(1.0 - u1, 0.0))
        phi = 2.0 * np.pi * u2
        ax, ay, az, bx, by, bz = _ortho_frame(nx, ny, nz)
        wx = st * np.cos(phi) * ax + st * np.sin(phi) * bx + ct * nx
        wy = st * np.cos(phi) * ay + st * np.sin(phi) * by + ct * ny
        wz = st * np.cos(phi) * az + st * np.sin(phi) * bz + ct * nz
    else:
        # cos^n lobe around the mirror direction
        ct = u1 ** (1.0 / (nexp + 1.0))
        st = np.sqrt(max(1.0 - ct * ct, 0.0))
        phi = 2.0 * np.pi * u2
        ax, ay, az, bx, by, bz = _ortho_frame(rx, ry, rz)
        wx = st * np.cos(phi) * ax + st * np.sin(phi) * bx + ct * rx
        wy = st * np.cos(phi) * ay + st * np.sin(phi) * by + ct * ry
        wz = st * np.cos(phi) * az + st * np.sin(phi) * bz + ct * rz
    wx, wy, wz = _normalize(wx, wy, wz)
    pdf = _phong_pdf(kd, ks, nexp, nx, ny, nz, rx, ry, rz, wx, wy, wz)
    return state, wx, wy, wz, pdf


@njit(cache=True, inline="always")
def _sample_band(state, ax, ay, az, sin_t0):
    """Solid-angle-uniform direction in the elevation band about the axis."""
    state, u1 = _next_unit(state)
    state, u2 = _next_unit(state)
    z = (2.0 * u1 - 1.0) * sin_t0
    r = np.sqrt(max(1.0 - z * z, 0.0))
    phi = 2.0 * np.pi * u2
    ux, uy, uz, vx, vy, vz = _ortho_frame(ax, ay, az)
    wx = r * np.cos(phi) * ux + r * np.sin(phi) * vx + z * ax
    wy = r * np.cos(phi) * uy + r * np.sin(phi) * vy + z * ay
    wz = r * np.cos(phi) * uz + r * np.sin(phi) * vz + z * az
    return state, wx, wy, wz


@njit(cache=True, inline="always")
def _target_dir(mode, px, py, pz, wlx, wly, wlz, qa, qb):
    """Per-point target outgoing direction for the active objective."""
    if mode == TARGET_RETRO:
        return wlx, wly, wlz
    if mode == TARGET_POINT:
        return _normalize(qa[0] - px, qa[1] - py, qa[2] - pz)
    # segment: closest point on [qa, qb]
    dx = qb[0] - qa[0]
    dy = qb[1] - qa[1]
    dz = qb[2] - qa[2]
    dd = dx * dx + dy * dy + dz * dz
    if dd < 1e-300:
        return _normalize(qa[0] - px, qa[1] - py, qa[2] - pz)
    s = ((px - qa[0]) * dx + (py - qa[1]) * dy + (pz - qa[2]) * dz) / dd
    s = min(max(s, 0.0), 1.0)
    return _normalize(qa[0] + s * dx - px, qa[1] + s * dy - py, qa[2] + s * dz - pz)


@njit(cache=True, inline="always")
def _loss(mode, L, l_star, eps_loss):
    """(loss, dloss_dL) for the active loss mode."""
    if mode == LOSS_HALF_SQ:
        return 0.5 * L * L, L
    if mode == LOSS_L2_TARGET:
        return 0.5 * (l_star - L) * (l_star - L), L - l_star
    return 1.0 / (L + eps_loss), -1.0 / ((L + eps_loss) * (L + eps_loss))


# ---------------------------------------------------------------------------
# Main estimation pass

@njit(cache=True, parallel=True)
def energy_grad_pass(
    v0, e1, e2, bmin, bmax, left, right, start, count, order,
    n_geo, t_shade, areas, c_pts,
    kd, ks, nexp, emitter,
    band_axis, band_sin_t0, band_fixed,
    loss_mode, target_mode, target_a, target_b, l_star, eps_loss,
    n_dir, n_path, seed, iteration, want_grad, eps_ray,
    face_energy, grad_self, bounce_face, bounce_grad,
):
    """One Monte Carlo pass over all faces: per-face energy and dE/dT.

    Per face k the estimator is A_k / N_dir * sum_i loss(L) * V(c_k, w_o*),
    where L is direct + one indirect bounce under a directional delta light.
    Path sampling uses the geometric normal so the sample positions and pdfs
    do not depend on the shading normals T: the pathwise derivative is then
    exactly the detached-sampling adjoint.

    Bounce-face gradient contributions are staged in per-sample slots
    (bounce_face / bounce_grad) for deterministic reduction by the caller.
    """
    F = v0.shape[0]
    for k in prange(F):
        state = _stream_init(seed, k, iteration)
        px = c_pts[k, 0]
        py = c_pts[k, 1]
        pz = c_pts[k, 2]
        ngx = n_geo[k, 0]
        ngy = n_geo[k, 1]
        ngz = n_geo[k, 2]
        tx = t_shade[k, 0]
        ty = t_shade[k, 1]
        tz = t_shade[k, 2]
        e_acc = 0.0
        gx_acc = 0.0
        gy_acc = 0.0
        gz_acc = 0.0
        for i in range(n_dir):
            if band_fixed:
                wlx = band_axis[0]
                wly = band_axis[1]
                wlz = band_axis[2]
                state, _u = _next_unit(state)
                state, _u = _next_unit(state)
            else:
                state, wlx, wly, wlz = _sample_band(state, band_axis[0], band_axis[1], band_axis[2], band_sin_t0)
            wox, woy, woz = _target_dir(target_mode, px, py, pz, wlx, wly, wlz, target_a, target_b)
            # outer visibility factor toward the target direction
            if bvh_anyhit(px, py, pz, wox, woy, woz, k, eps_ray,
                          v0, e1, e2, bmin, bmax, left, right, start, count, order):
                v_out = 0.0
            else:
                v_out = 1.0
            # light shadow ray (shared with v_out in the retro case)
            if target_mode == TARGET_RETRO:
                v_l = v_out
            else:
                if _dot(ngx, ngy, ngz, wlx, wly, wlz) <= 0.0 or bvh_anyhit(
                    px, py, pz, wlx, wly, wlz, k, eps_ray,
                    v0, e1, e2, bmin, bmax, left, right, start, count, order,
                ):
                    v_l = 0.0
                else:
                    v_l = 1.0
            if _dot(ngx, ngy, ngz, wlx, wly, wlz) <= 0.0:
                v_l = 0.0
            # direct term (delta light, deterministic)
            fcos, dgx, dgy, dgz = _phong_fcos_grad(
                kd, ks, nexp, tx, ty, tz, wox, woy, woz, wlx, wly, wlz
            )
            L = v_l * emitter * fcos
            dLx = v_l * emitter * dgx
            dLy = v_l * emitter * dgy
            dLz = v_l * emitter * dgz
            # one indirect bounce, BSDF-sampled about the geometric normal
            inv_np = 1.0 / n_path
            for s in range(n_path):
                slot = (k * n_dir + i) * n_path + s
                bounce_face[slot] = -1
                state, wsx, wsy, wsz, pdf = _sample_phong(
                    state, kd, ks, nexp, ngx, ngy, ngz, wox, woy, woz
                )
                if pdf <= 1e-12 or _dot(ngx, ngy, ngz, wsx, wsy, wsz) <= 0.0:
                    continue
                hit_f, hit_t = bvh_nearest(
                    px, py, pz, wsx, wsy, wsz, k, eps_ray,
                    v0, e1, e2, bmin, bmax, left, right, start, count, order,
                )
                if hit_f < 0:
                    continue
                qx = px + hit_t * wsx
                qy = py + hit_t * wsy
                qz = pz + hit_t * wsz
                njx = n_geo[hit_f, 0]
                njy = n_geo[hit_f, 1]
                njz = n_geo[hit_f, 2]
                if _dot(njx, njy, njz, wlx, wly, wlz) <= 0.0:
                    continue
                if bvh_anyhit(qx, qy, qz, wlx, wly, wlz, hit_f, eps_ray,
                              v0, e1, e2, bmin, bmax, left, right, start, count, order):
                    continue
                tjx = t_shade[hit_f, 0]
                tjy = t_shade[hit_f, 1]
                tjz = t_shade[hit_f, 2]
                # radiance leaving the hit point back toward us
                fcos_j, djx, djy, djz = _phong_fcos_grad(
                    kd, ks, nexp, tjx, tjy, tjz, -wsx, -wsy, -wsz, wlx, wly, wlz
                )
                L_j = emitter * fcos_j
                fcos_k, dkx, dky, dkz = _phong_fcos_grad(
                    kd, ks, nexp, tx, ty, tz, wox, woy, woz, wsx, wsy, wsz
                )
                w = inv_np / pdf
                L += w * fcos_k * L_j
                if want_grad:
                    dLx += w * dkx * L_j
                    dLy += w * dky * L_j
                    dLz += w * dkz * L_j
                    bounce_face[slot] = hit_f
                    bounce_grad[slot, 0] = w * fcos_k * emitter * djx
                    bounce_grad[slot, 1] = w * fcos_k * emitter * djy
                    bounce_grad[slot, 2] = w * fcos_k * emitter * djz
            loss, dloss = _loss(loss_mode, L, l_star, eps_loss)
            e_acc += loss * v_out
            if want_grad:
                c = dloss * v_out
                gx_acc += c * dLx
                gy_acc += c * dLy
                gz_acc += c * dLz
                if v_out != 0.0:
                    base = (k * n_dir + i) * n_path
                    for s in range(n_path):
                        bounce_grad[base + s, 0] *= dloss
                        bounce_grad[base + s, 1] *= dloss
                        bounce_grad[base + s, 2] *= dloss
                else:
                    base = (k * n_dir + i) * n_path
                    for s in range(n_path):
                        bounce_face[base + s] = -1
        scale = areas[k] / n_dir
        face_energy[k] = scale * e_acc
        if want_grad:
            grad_self[k, 0] = scale * gx_acc
            grad_self[k, 1] = scale * gy_acc
            grad_self[k, 2] = scale * gz_acc
            base = k * n_dir * n_path
            for s in range(n_dir * n_path):
                bounce_grad[base + s, 0] *= scale
                bounce_grad[base + s, 1] *= scale
                bounce_grad[base + s, 2] *= scale


# ---------------------------------------------------------------------------
# Scalar helpers for the python-level API

@njit(cache=True)
def radiance_single(
    v0, e1, e2, bmin, bmax, left, right, start, count, order,
    n_geo, t_shade,
    px, py, pz, face, wox, woy, woz, wlx, wly, wlz,
    kd, ks, nexp, emitter, n_path, seed, eps_ray,
):
    """Direct + one-bounce radiance estimate at a single surface point."""
    state = _stream_init(seed, face, np.uint64(0))
    ngx = n_geo[face, 0]
    ngy = n_geo[face, 1]
    ngz = n_geo[face, 2]
    tx = t_shade[face, 0]
    ty = t_shade[face, 1]
    tz = t_shade[face, 2]
    v_l = 1.0
    if _dot(ngx, ngy, ngz, wlx, wly, wlz) <= 0.0 or bvh_anyhit(
        px, py, pz, wlx, wly, wlz, face, eps_ray,
        v0, e1, e2, bmin, bmax, left, right, start, count, order,
    ):
        v_l = 0.0
    f = _phong_f(kd, ks, nexp, tx, ty, tz, wox, woy, woz, wlx, wly, wlz)
    cosl = max(_dot(tx, ty, tz, wlx, wly, wlz), 0.0)
    L = v_l * emitter * f * cosl
    for _s in range(n_path):
        state, wsx, wsy, wsz, pdf = _sample_phong(
            state, kd, ks, nexp, ngx, ngy, ngz, wox, woy, woz
        )
        if pdf <= 1e-12 or _dot(ngx, ngy, ngz, wsx, wsy, wsz) <= 0.0:
            continue
        hit_f, hit_t = bvh_nearest(
            px, py, pz, wsx, wsy, wsz, face, eps_ray,
            v0, e1, e2, bmin, bmax, left, right, start, count, order,
        )
        if hit_f < 0:
            continue
        qx = px + hit_t * wsx
        qy = py + hit_t * wsy
        qz = pz + hit_t * wsz
        njx = n_geo[hit_f, 0]
        njy = n_geo[hit_f, 1]
        njz = n_geo[hit_f, 2]
        if _dot(njx, njy, njz, wlx, wly, wlz) <= 0.0:
            continue
        if bvh_anyhit(qx, qy, qz, wlx, wly, wlz, hit_f, eps_ray,
                      v0, e1, e2, bmin, bmax, left, right, start, count, order):
            continue
        tjx = t_shade[hit_f, 0]
        tjy = t_shade[hit_f, 1]
        tjz = t_shade[hit_f, 2]
        f_j = _phong_f(kd, ks, nexp, tjx, tjy, tjz, -wsx, -wsy, -wsz, wlx, wly, wlz)
        cos_j = max(_dot(tjx, tjy, tjz, wlx, wly, wlz), 0.0)
        f_k = _phong_f(kd, ks, nexp, tx, ty, tz, wox, woy, woz, wsx, wsy, wsz)
        cos_k = max(_dot(tx, ty, tz, wsx, wsy, wsz), 0.0)
        L += f_k * cos_k / pdf * emitter * f_j * cos_j / n_path
    return L


@njit(cache=True)
def radiance_adjoint_single(
    v0, e1, e2, bmin, bmax, left, right, start, count, order,
    n_geo, t_shade,
    px, py, pz, face, wox, woy, woz, wlx, wly, wlz,
    kd, ks, nexp, emitter, n_path, seed, eps_ray,
    adjoint_weight, out_grad,
):
    """Estimate L at one point and accumulate adjoint_weight * dL/dT.

    Derivatives land in out_grad for the shaded face and any bounce faces
    touched by the sampled paths (unprojected; callers tangent-project).
    Returns the primal radiance estimate.
    """
    state = _stream_init(seed, face, np.uint64(0))
    ngx = n_geo[face, 0]
    ngy = n_geo[face, 1]
    ngz = n_geo[face, 2]
    tx = t_shade[face, 0]
    ty = t_shade[face, 1]
    tz = t_shade[face, 2]
    v_l = 1.0
    if _dot(ngx, ngy, ngz, wlx, wly, wlz) <= 0.0 or bvh_anyhit(
        px, py, pz, wlx, wly, wlz, face, eps_ray,
        v0, e1, e2, bmin, bmax, left, right, start, count, order,
    ):
        v_l = 0.0
    fcos, dgx, dgy, dgz = _phong_fcos_grad(
        kd, ks, nexp, tx, ty, tz, wox, woy, woz, wlx, wly, wlz
    )
    L = v_l * emitter * fcos
    out_grad[face, 0] += adjoint_weight * v_l * emitter * dgx
    out_grad[face, 1] += adjoint_weight * v_l * emitter * dgy
    out_grad[face, 2] += adjoint_weight * v_l * emitter * dgz
    inv_np = 1.0 / n_path
    for _s in range(n_path):
        state, wsx, wsy, wsz, pdf = _sample_phong(
            state, kd, ks, nexp, ngx, ngy, ngz, wox, woy, woz
        )
        if pdf <= 1e-12 or _dot(ngx, ngy, ngz, wsx, wsy, wsz) <= 0.0:
            continue
        hit_f, hit_t = bvh_nearest(
            px, py, pz, wsx, wsy, wsz, face, eps_ray,
            v0, e1, e2, bmin, bmax, left, right, start, count, order,
        )
        if hit_f < 0:
            continue
        qx = px + hit_t * wsx
        qy = py + hit_t * wsy
        qz = pz + hit_t * wsz
        if _dot(n_geo[hit_f, 0], n_geo[hit_f, 1], n_geo[hit_f, 2], wlx, wly, wlz) <= 0.0:
            continue
        if bvh_anyhit(qx, qy, qz, wlx, wly, wlz, hit_f, eps_ray,
                      v0, e1, e2, bmin, bmax, left, right, start, count, order):
            continue
        fcos_j, djx, djy, djz = _phong_fcos_grad(
            kd, ks, nexp,
            t_shade[hit_f, 0], t_shade[hit_f, 1], t_shade[hit_f, 2],
            -wsx, -wsy, -wsz, wlx, wly, wlz,
        )
        fcos_k, dkx, dky, dkz = _phong_fcos_grad(
            kd, ks, nexp, tx, ty, tz, wox, woy, woz, wsx, wsy, wsz
        )
        w = inv_np / pdf
        L += w * fcos_k * emitter * fcos_j
        out_grad[face, 0] += adjoint_weight * w * dkx * emitter * fcos_j
        out_grad[face, 1] += adjoint_weight * w * dky * emitter * fcos_j
        out_grad[face, 2] += adjoint_weight * w * dkz * emitter * fcos_j
        out_grad[hit_f, 0] += adjoint_weight * w * fcos_k * emitter * djx
        out_grad[hit_f, 1] += adjoint_weight * w * fcos_k * emitter * djy
        out_grad[hit_f, 2] += adjoint_weight * w * fcos_k * emitter * djz
    return L


@njit(cache=True)
def sample_phong_one(seed, kd, ks, nexp, nx, ny, nz, wox, woy, woz):
    state = _mix64(np.uint64(seed))
    state, wx, wy, wz, pdf = _sample_phong(state, kd, ks, nexp, nx, ny, nz, wox, woy, woz)
    return wx, wy, wz, pdf


@njit(cache=True)
def sample_band_one(seed, ax, ay, az, sin_t0):
    state = _mix64(np.uint64(seed))
    state, wx, wy, wz = _sample_band(state, ax, ay, az, sin_t0)
    return wx, wy, wz
