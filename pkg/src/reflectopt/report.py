"""Run artifacts: history CSVs, convergence figures, per-face heatmap renders.

Everything here writes files; nothing mutates optimizer state. Figures are
rendered with the Agg backend so reports work headless.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PolyCollection  # noqa: E402

from .geom import Mesh, face_normals  # noqa: E402
from .optimize import HISTORY_COLUMNS, OptimizerState  # noqa: E402


def write_history_csv(history: list[dict], path: str | Path):
    """Delimited history, one row per vertex update, fixed column order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                        for c in HISTORY_COLUMNS])


def write_split_report_csv(state: OptimizerState, path: str | Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["batch", "v0", "v1", "C_refl", "C_geom", "product"])
        for batch, report in enumerate(state.split_reports):
            for v0, v1, cr, cg, p in report.rows():
                w.writerow([batch, v0, v1, repr(cr), repr(cg), repr(p)])


def write_comparison_csv(rows: list[dict], path: str | Path):
    """Baseline-comparison table: one row per strategy."""
    cols = [
        "strategy", "seed", "updates", "initial_E", "final_E",
        "rel_cell_area_diff", "mean_vertex_disp", "degenerated",
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                        for c in cols])


def render_history_figures(history: list[dict], out_dir: str | Path) -> list[Path]:
    """Energy, displacement, and normal-roughness curves as PNGs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if not history:
        return written
    it = [row["iteration"] for row in history]
    panels = (
        ("E_refl", "reflectivity energy", "energy.png", True),
        ("mean_vertex_disp", "mean vertex displacement", "displacement.png", False),
        ("mean_adj_normal_diff", "mean adjacent-normal angle (rad)",
         "normal_roughness.png", False),
    )
    for key, label, fname, logy in panels:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(it, [row[key] for row in history], lw=1.5)
        vals = [row[key] for row in history]
        if logy and min(vals) > 0:
            ax.set_yscale("log")
        ax.set_xlabel("vertex update")
        ax.set_ylabel(label)
        # shade stage boundaries
        stages = [row["stage"] for row in history]
        for i in range(1, len(stages)):
            if stages[i] != stages[i - 1]:
                ax.axvline(it[i], color="gray", ls="--", lw=0.8)
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written


def _project(mesh: Mesh, view_dir: np.ndarray):
    """Orthographic projection of face triangles along view_dir, depth-sorted."""
    d = view_dir / np.linalg.norm(view_dir)
    # build a right-handed frame about the view direction
    up = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(up, d)
    x /= np.linalg.norm(x)
    y = np.cross(d, x)
    v = mesh.vertices
    tri = v[mesh.faces]  # (F, 3, 3)
    uv = np.stack([tri @ x, tri @ y], axis=-1)
    depth = (tri @ d).mean(axis=1)
    order = np.argsort(depth)  # far to near for painter's algorithm
    facing = face_normals(mesh) @ d
    return uv, order, facing


def render_heatmap(
    mesh: Mesh,
    face_values: np.ndarray,
    path: str | Path,
    view_dir=(0.0, 0.0, 1.0),
    image_size: int = 512,
    title: str | None = None,
) -> Path:
    """Flat-shaded per-face scalar heatmap seen from view_dir, saved as PNG."""
    view = np.asarray(view_dir, dtype=float)
    uv, order, facing = _project(mesh, view)
    vals = np.asarray(face_values, dtype=float)
    vmax = max(float(vals.max()), 1e-12)
    fig, ax = plt.subplots(figsize=(image_size / 100, image_size / 100))
    coll = PolyCollection(
        uv[order], array=vals[order], cmap="viridis", edgecolors="none",
    )
    coll.set_clim(0.0, vmax)
    ax.add_collection(coll)
    lo = uv.reshape(-1, 2).min(axis=0)
    hi = uv.reshape(-1, 2).max(axis=0)
    pad = 0.05 * max(hi - lo)
    ax.set_xlim(lo[0] - pad, hi[0] + pad)
    ax.set_ylim(lo[1] - pad, hi[1] + pad)
    ax.set_aspect("equal")
    ax.axis("off")
    if title:
        ax.set_title(title)
    fig.colorbar(coll, ax=ax, shrink=0.75)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
