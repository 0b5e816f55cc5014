"""Coarse-to-fine reflectivity optimization and baseline strategies.

The main driver alternates normal-gradient descent on the target normals,
TV denoising, and an ARAP vertex solve, in three stages: rigid per-vertex
elements first, per-face elements second, then an adaptive edge-split batch
followed by a final per-face stage. Baselines update vertex positions
directly from the same gradients, optionally premultiplied by an inverse
(bi-)Laplacian preconditioner.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import stylize
from .denoise import TvParams, tv_filter
from .energy import ReflectivitySpec
from .geom import Mesh, edge_list, face_areas, face_normals
from .grad import TargetNormals, energy_gradient, regularized_step
from .remesh import SplitReport, select_and_split
from .trace import DirectionalBand, PhongParams, PhongScene, build_scene


# The directional emitter's radiometric scale is a free calibration (energies
# are comparable only within a fixed scale). 0.5 keeps the default normal-step
# size in the stable regime on diagonal-3 meshes: per-face gradient steps stay
# below a radian, so targets tilt rather than flip.
DEFAULT_EMITTER_RADIANCE = 0.5


class Stage(str, Enum):
    COARSE_RIM_SPOKE = "coarse_rim_spoke"
    FINE_FACE = "fine_face"
    POST_SPLIT_FACE = "post_split_face"
    DONE = "done"


@dataclass
class HyperParams:
    """Steering knobs; mutable so a live session can adjust them mid-run."""

    eta: float = 200.0
    beta: float = 0.1
    lambda_style: float = 1000.0
    tv_alpha: float = 250.0
    n_gradient: int = 8
    n_path: int = 8
    n_dir: int = 16
    theta0: float = np.deg2rad(20.0)
    stage_iters: tuple[int, int, int] = (30, 30, 30)
    split_fraction: float = 0.05
    precondition_mu: float = 10.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.lambda_style <= 0:
            raise ValueError("lambda_style must be positive")
        if self.tv_alpha <= 0:
            raise ValueError("tv_alpha must be positive")
        if self.n_gradient < 1:
            raise ValueError("n_gradient must be >= 1")
        if self.n_path < 1 or self.n_dir < 1:
            raise ValueError("n_path and n_dir must be >= 1")
        if not (0 < self.theta0 <= np.pi / 2):
            raise ValueError("theta0 must lie in (0, pi/2]")
        if len(self.stage_iters) != 3 or any(n < 0 for n in self.stage_iters):
            raise ValueError("stage_iters must be three non-negative counts")
        if not (0.0 <= self.split_fraction <= 1.0):
            raise ValueError("split_fraction must lie in [0, 1]")
        if self.precondition_mu < 0:
            raise ValueError("precondition_mu must be non-negative")


HISTORY_COLUMNS = (
    "iteration",
    "stage",
    "wall_ms",
    "E_refl",
    "mean_vertex_disp",
    "mean_adj_normal_diff",
    "face_count",
)


@dataclass
class OptimizerState:
    """Mutable loop state handed to callbacks as immutable snapshots."""

    mesh: Mesh
    T: TargetNormals
    stage: Stage = Stage.COARSE_RIM_SPOKE
    iteration: int = 0
    gradient_steps: int = 0
    energy_history: list[dict] = field(default_factory=list)
    face_energy: np.ndarray | None = None
    split_reports: list[SplitReport] = field(default_factory=list)
    paused: bool = False
    revision: int = 0
    # live-steering hooks, mutated by session callbacks between updates
    element_override: stylize.ElementKind | None = None
    split_requested: bool = False

    def record(self, wall_ms: float, e_refl: float):
        self.energy_history.append(
            {
                "iteration": self.iteration,
                "stage": self.stage.value,
                "wall_ms": wall_ms,
                "E_refl": e_refl,
                "mean_vertex_disp": mean_vertex_displacement(self.mesh),
                "mean_adj_normal_diff": mean_adjacent_normal_diff(self.mesh),
                "face_count": self.mesh.num_faces,
            }
        )


def mean_vertex_displacement(mesh: Mesh) -> float:
    """Mean distance each vertex has moved from its reference position."""
    return float(
        np.linalg.norm(mesh.vertices - mesh.reference_vertices, axis=1).mean()
    )


def mean_adjacent_normal_diff(mesh: Mesh) -> float:
    """Mean angle (radians) between face normals across interior edges."""
    n = face_normals(mesh)
    total = 0.0
    count = 0
    for e in edge_list(mesh):
        if not e.is_interior:
            continue
        f1, f2 = e.adjacent_faces
        total += float(np.arccos(np.clip(n[f1] @ n[f2], -1.0, 1.0)))
        count += 1
    return total / count if count else 0.0


def relative_cell_area_diff(mesh: Mesh) -> float:
    """Mean |A'_k - A_k| / A_k against the reference mesh (same topology)."""
    a_ref = face_areas(mesh, mesh.reference_vertices)
    a_cur = face_areas(mesh)
    return float(np.abs((a_cur - a_ref) / a_ref).mean())


def _rebuild_scene(mesh: Mesh, brdf, band, emitter) -> PhongScene:
    return build_scene(mesh, brdf, band, emitter)


def _element_kind(stage: Stage) -> stylize.ElementKind:
    if stage == Stage.COARSE_RIM_SPOKE:
        return stylize.ElementKind.RIM_SPOKE
    return stylize.ElementKind.FACE_ONLY


def vertex_update(
    state: OptimizerState,
    system: stylize.ArapSystem,
    spec: ReflectivitySpec,
    params: HyperParams,
    brdf: PhongParams,
    band: DirectionalBand,
    seed: int,
    emitter_radiance: float = DEFAULT_EMITTER_RADIANCE,
) -> float:
    """One outer iteration: gradient steps on T, denoise, ARAP solve, reinit.

    Returns the recorded E_refl: the mean of the n_gradient passes' primal
    energy estimates. The first pass sees T equal to the current face normals
    and measures the mesh exactly; later passes measure it under the partially
    descended shading normals. Averaging over the passes' independent sample
    sets shrinks the recorded noise several-fold versus a single estimate.
    """
    t0 = time.perf_counter()
    scene = _rebuild_scene(state.mesh, brdf, band, emitter_radiance)
    # the soft constraint pulls targets toward the undeformed mesh's normals,
    # anchoring the optimized shape to the input
    ref_normals = face_normals(state.mesh, state.mesh.reference_vertices)
    areas = scene.areas
    T = state.T
    first_pass = True
    e_sum = 0.0
    for _ in range(params.n_gradient):
        e, G = energy_gradient(
            scene, spec, T, seed,
            n_dir=params.n_dir, n_path=params.n_path,
            iteration=state.gradient_steps,
        )
        e_sum += e
        if first_pass:
            first_pass = False
            state.face_energy = G.face_energy.copy()
        T = regularized_step(T, G, ref_normals, params.eta, params.beta, areas)
        state.gradient_steps += 1
    T = tv_filter(state.mesh, T, TvParams(alpha=params.tv_alpha))
    v_new = stylize.solve(system, T, state.mesh.vertices)
    state.mesh = Mesh(v_new, state.mesh.faces, state.mesh.reference_vertices)
    state.T = TargetNormals(face_normals(state.mesh))
    state.iteration += 1
    e_mean = e_sum / params.n_gradient
    state.record((time.perf_counter() - t0) * 1e3, e_mean)
    return e_mean


def _snapshot(state: OptimizerState, params: HyperParams) -> dict:
    state.revision += 1
    return {
        "revision": state.revision,
        "stage": state.stage.value,
        "iteration": state.iteration,
        "vertices": state.mesh.vertices.copy(),
        "faces": state.mesh.faces.copy(),
        "face_energy": (
            state.face_energy.copy()
            if state.face_energy is not None
            else np.zeros(state.mesh.num_faces)
        ),
        "energy_history": list(state.energy_history[-50:]),
        "params": replace(params),
        "paused": state.paused,
    }


def _notify(callbacks, state: OptimizerState, params: HyperParams) -> bool:
    """Deliver a snapshot; any callback returning False requests a clean stop."""
    if not callbacks:
        return True
    snap = _snapshot(state, params)
    keep_going = True
    for cb in callbacks:
        if cb(snap) is False:
            keep_going = False
    return keep_going


def run_schedule(
    mesh: Mesh,
    spec: ReflectivitySpec,
    params: HyperParams | None = None,
    brdf: PhongParams | None = None,
    band: DirectionalBand | None = None,
    seed: int = 0,
    callbacks=(),
    emitter_radiance: float = DEFAULT_EMITTER_RADIANCE,
    on_state=None,
) -> tuple[Mesh, OptimizerState]:
    """Run the three-stage schedule; returns the final mesh and loop state.

    Stage 1 uses rim-spoke elements, stages 2 and 3 face elements, with one
    edge-split batch between them (skipped when split_fraction is 0).
    Callbacks receive a snapshot after every vertex update; returning False
    terminates the run cleanly with history intact. `on_state` is called
    once with the live OptimizerState so steering code can set its hooks.
    """
    params = params or HyperParams()
    brdf = brdf or PhongParams()
    band = band or DirectionalBand(theta0=params.theta0)
    state = OptimizerState(mesh=mesh, T=TargetNormals(face_normals(mesh)))
    if on_state is not None:
        on_state(state)
    if not _notify(callbacks, state, params):
        state.stage = Stage.DONE
        return state.mesh, state

    stages = (
        (Stage.COARSE_RIM_SPOKE, params.stage_iters[0]),
        (Stage.FINE_FACE, params.stage_iters[1]),
        (Stage.POST_SPLIT_FACE, params.stage_iters[2]),
    )
    for stage, n_iters in stages:
        if stage == Stage.POST_SPLIT_FACE and params.split_fraction > 0:
            if state.face_energy is None or len(state.face_energy) != state.mesh.num_faces:
                # no evaluation pass yet on this topology; run one for the scores
                scene = _rebuild_scene(state.mesh, brdf, band, emitter_radiance)
                _, G = energy_gradient(
                    scene, spec, state.T, seed,
                    n_dir=params.n_dir, n_path=params.n_path,
                    iteration=state.gradient_steps,
                )
                state.face_energy = G.face_energy.copy()
            new_mesh, report = select_and_split(
                state.mesh, state.face_energy, params.split_fraction
            )
            state.split_reports.append(report)
            state.mesh = new_mesh
            state.T = TargetNormals(face_normals(state.mesh))
            state.face_energy = None
        if n_iters == 0:
            continue
        state.stage = stage
        system = None
        system_key = None
        for _ in range(n_iters):
            if (
                state.split_requested
                and state.face_energy is not None
                and len(state.face_energy) == state.mesh.num_faces
            ):
                # deferred until a pass on the current topology scored faces
                state.split_requested = False
                new_mesh, report = select_and_split(
                    state.mesh, state.face_energy, params.split_fraction or 0.05
                )
                state.split_reports.append(report)
                state.mesh = new_mesh
                state.T = TargetNormals(face_normals(state.mesh))
                state.face_energy = None
            kind = state.element_override or _element_kind(stage)
            key = (kind, state.mesh.num_faces, id(state.mesh.faces))
            if key != system_key:
                system = stylize.build_system(state.mesh, kind, params.lambda_style)
                system_key = key
            vertex_update(
                state, system, spec, params, brdf, band, seed, emitter_radiance
            )
            if not _notify(callbacks, state, params):
                state.stage = Stage.DONE
                return state.mesh, state
    state.stage = Stage.DONE
    _notify(callbacks, state, params)
    return state.mesh, state


def normal_jacobian_step(mesh: Mesh, normal_grad: np.ndarray) -> np.ndarray:
    """Chain a per-face normal gradient to per-vertex positions.

    For face (a, b, c) with u = b - a, w = c - a, the unnormalized normal is
    m = u x w and n = m/|m|; dE/dv follows from dn/dm = (I - n n^T)/|m| and
    the cross-product structure. Face area and sample point dependence on V
    are ignored (continuous transport term only).
    """
    v = mesh.vertices
    f = mesh.faces
    u = v[f[:, 1]] - v[f[:, 0]]
    w = v[f[:, 2]] - v[f[:, 0]]
    m = np.cross(u, w)
    lm = np.linalg.norm(m, axis=1)
    n = m / lm[:, None]
    # g_m = (I - n n^T) g_n / |m|
    g_m = (normal_grad - (normal_grad * n).sum(axis=1, keepdims=True) * n) / lm[:, None]
    # dE = g_m . (du x w + u x dw) = du . (w x g_m) + dw . (g_m x u)
    g_u = np.cross(w, g_m)
    g_w = np.cross(g_m, u)
    out = np.zeros_like(v)
    np.add.at(out, f[:, 0], -(g_u + g_w))
    np.add.at(out, f[:, 1], g_u)
    np.add.at(out, f[:, 2], g_w)
    return out


class MeshDegenerationError(RuntimeError):
    """A vertex-descent run produced a (near-)zero-area face.

    Carries the partial history: .state is the OptimizerState at failure.
    """

    def __init__(self, message: str, state: "OptimizerState | None" = None):
        super().__init__(message)
        self.state = state


def _vertex_gradient(scene, spec, T, params, seed, iteration):
    e, G = energy_gradient(
        scene, spec, T, seed,
        n_dir=params.n_dir, n_path=params.n_path, iteration=iteration,
    )
    return e, normal_jacobian_step(scene.mesh, G.values), G


def _descent_loop(
    mesh: Mesh,
    spec: ReflectivitySpec,
    params: HyperParams,
    brdf: PhongParams,
    band: DirectionalBand,
    seed: int,
    n_updates: int,
    emitter_radiance: float,
    precondition,
) -> tuple[Mesh, OptimizerState]:
    state = OptimizerState(mesh=mesh, T=TargetNormals(face_normals(mesh)))
    state.stage = Stage.FINE_FACE
    for _ in range(n_updates):
        t0 = time.perf_counter()
        areas = face_areas(state.mesh)
        if (areas < 1e-12).any():
            raise MeshDegenerationError(
                f"zero-area face after {state.iteration} updates", state
            )
        try:
            scene = _rebuild_scene(state.mesh, brdf, band, emitter_radiance)
        except Exception as exc:  # degenerate geometry breaks the BVH
            raise MeshDegenerationError(str(exc), state) from exc
        e, v_grad, G = _vertex_gradient(
            scene, spec, state.T, params, seed, state.gradient_steps
        )
        state.face_energy = G.face_energy.copy()
        state.gradient_steps += 1
        step = precondition(state.mesh, v_grad) if precondition else v_grad
        v_new = state.mesh.vertices - params.eta * step
        if not np.isfinite(v_new).all():
            raise MeshDegenerationError("non-finite vertex positions", state)
        state.mesh = Mesh(v_new, state.mesh.faces, state.mesh.reference_vertices)
        try:
            state.T = TargetNormals(face_normals(state.mesh))
        except ValueError as exc:  # overflowing cross products yield bad normals
            raise MeshDegenerationError(str(exc), state) from exc
        state.iteration += 1
        state.record((time.perf_counter() - t0) * 1e3, e)
    state.stage = Stage.DONE
    return state.mesh, state


def baseline_vertex_descent(
    mesh: Mesh,
    spec: ReflectivitySpec,
    params: HyperParams | None = None,
    brdf: PhongParams | None = None,
    band: DirectionalBand | None = None,
    seed: int = 0,
    n_updates: int = 15,
    emitter_radiance: float = DEFAULT_EMITTER_RADIANCE,
) -> tuple[Mesh, OptimizerState]:
    """Direct noisy-gradient descent on vertex positions.

    Degenerating the mesh raises MeshDegenerationError; callers that study
    the failure mode should catch it and inspect the partial history.
    """
    params = params or HyperParams()
    brdf = brdf or PhongParams()
    band = band or DirectionalBand(theta0=params.theta0)
    return _descent_loop(
        mesh, spec, params, brdf, band, seed, n_updates, emitter_radiance, None
    )


def _cotangent_laplacian(mesh: Mesh) -> sp.csr_matrix:
    sys_ = stylize.build_system(mesh, stylize.ElementKind.FACE_ONLY, 1.0)
    return sys_.laplacian


def baseline_preconditioned(
    mesh: Mesh,
    spec: ReflectivitySpec,
    params: HyperParams | None = None,
    brdf: PhongParams | None = None,
    band: DirectionalBand | None = None,
    seed: int = 0,
    n_updates: int = 15,
    order: int = 1,
    emitter_radiance: float = DEFAULT_EMITTER_RADIANCE,
) -> tuple[Mesh, OptimizerState]:
    """Vertex descent with the step premultiplied by (I + mu L^order)^-1."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    params = params or HyperParams()
    brdf = brdf or PhongParams()
    band = band or DirectionalBand(theta0=params.theta0)
    mu = params.precondition_mu
    cache: dict[int, object] = {}

    def precondition(m: Mesh, g: np.ndarray) -> np.ndarray:
        if mu == 0.0:
            return g
        key = id(m)
        if key not in cache:
            L = _cotangent_laplacian(m)
            P = sp.identity(m.num_vertices) + mu * (L if order == 1 else L @ L)
            cache.clear()
            cache[key] = spla.factorized(P.tocsc())
        solve = cache[key]
        return np.column_stack([solve(g[:, c]) for c in range(3)])

    return _descent_loop(
        mesh, spec, params, brdf, band, seed, n_updates, emitter_radiance,
        precondition,
    )
