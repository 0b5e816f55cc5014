"""Artifact writers: history/split/comparison CSVs and figure rendering."""

import csv

import numpy as np

from reflectopt import shapes
from reflectopt.optimize import HISTORY_COLUMNS, OptimizerState
from reflectopt.grad import TargetNormals
from reflectopt.geom import face_normals
from reflectopt.remesh import select_and_split
from reflectopt.report import (
    render_heatmap,
    render_history_figures,
    write_comparison_csv,
    write_history_csv,
    write_split_report_csv,
)


def fake_history(n=6):
    rows = []
    for i in range(n):
        rows.append(
            {
                "iteration": i + 1,
                "stage": "coarse_rim_spoke" if i < 3 else "fine_face",
                "wall_ms": 10.0 + i,
                "E_refl": 0.1 / (i + 1),
                "mean_vertex_disp": 0.01 * i,
                "mean_adj_normal_diff": 0.2,
                "face_count": 80,
            }
        )
    return rows


def test_history_csv_round_trip(tmp_path):
    history = fake_history()
    path = tmp_path / "history.csv"
    write_history_csv(history, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(HISTORY_COLUMNS)
    assert len(rows) == len(history) + 1
    for raw, src in zip(rows[1:], history, strict=True):
        rec = dict(zip(HISTORY_COLUMNS, raw, strict=True))
        # repr round-trips floats exactly
        assert float(rec["E_refl"]) == src["E_refl"]
        assert int(rec["iteration"]) == src["iteration"]
        assert rec["stage"] == src["stage"]


def test_history_csv_deterministic_bytes(tmp_path):
    history = fake_history()
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_history_csv(history, p1)
    write_history_csv(history, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_split_report_csv(tmp_path, octa):
    _, report = select_and_split(octa, np.ones(octa.num_faces), 0.25)
    state = OptimizerState(mesh=octa, T=TargetNormals(face_normals(octa)))
    state.split_reports.append(report)
    path = tmp_path / "splits.csv"
    write_split_report_csv(state, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["batch", "v0", "v1", "C_refl", "C_geom", "product"]
    assert len(rows) == 1 + len(report.selected)
    for raw in rows[1:]:
        assert raw[0] == "0"
        assert float(raw[5]) == float(raw[3]) * float(raw[4])


def test_comparison_csv(tmp_path):
    rows = [
        {
            "strategy": "ours",
            "seed": 0,
            "updates": 90,
            "initial_E": 0.05,
            "final_E": 0.02,
            "rel_cell_area_diff": 0.01,
            "mean_vertex_disp": 0.08,
            "degenerated": False,
        }
    ]
    path = tmp_path / "compare.csv"
    write_comparison_csv(rows, path)
    with open(path, newline="") as fh:
        parsed = list(csv.reader(fh))
    assert parsed[1][0] == "ours"
    assert float(parsed[1][4]) == 0.02


def test_render_history_figures(tmp_path):
    written = render_history_figures(fake_history(), tmp_path / "figs")
    names = sorted(p.name for p in written)
    assert names == ["displacement.png", "energy.png", "normal_roughness.png"]
    for p in written:
        assert p.stat().st_size > 1000
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_render_history_figures_empty(tmp_path):
    assert render_history_figures([], tmp_path / "figs") == []


def test_render_heatmap(tmp_path, small_sphere, rng):
    vals = rng.random(small_sphere.num_faces)
    path = render_heatmap(small_sphere, vals, tmp_path / "heat.png", title="E per face")
    assert path.exists()
    assert path.stat().st_size > 1000
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_render_heatmap_custom_view(tmp_path):
    mesh = shapes.plate()
    path = render_heatmap(
        mesh, np.array([1.0, 2.0]), tmp_path / "side.png", view_dir=(1.0, 0.2, 0.4),
        image_size=128,
    )
    assert path.exists()
