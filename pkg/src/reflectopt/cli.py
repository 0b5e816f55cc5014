"""Command-line entry points: optimize, evaluate, compare-baselines, serve.

Exit codes: 0 success, 1 runtime error, 2 usage/config error.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

import click
import numpy as np

from . import optimize, report, shapes
from .config import ConfigError, RunConfig, dump_config, parse_config
from .energy import ReflectivitySpec, per_face_energy
from .geom import Mesh, MeshError, load_mesh, normalize_scale, save_mesh
from .trace import build_scene, radiance


def _apply_thread_cap():
    cap = os.environ.get("STEALTH_THREADS")
    if cap:
        try:
            n = max(1, int(cap))
        except ValueError:
            raise click.UsageError("STEALTH_THREADS must be an integer")
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _builtin_mesh(name: str) -> Mesh:
    if name == "plate":
        return shapes.plate()  # unit area, kept unscaled for oracle checks
    builders = {
        "icosphere": lambda: shapes.icosphere(3),
        "bent_ridge": shapes.bent_ridge,
        "cube": lambda: shapes.cube_grid(8),
        "octahedron": shapes.octahedron,
    }
    return normalize_scale(builders[name]())


def _load_input(path: str) -> Mesh:
    if path.startswith("builtin:"):
        return _builtin_mesh(path.removeprefix("builtin:"))
    return normalize_scale(load_mesh(path))


def _resolve_config(config_path, seed, output, n_dir, checkpoint_every) -> RunConfig:
    cfg = parse_config(config_path) if config_path else RunConfig()
    if seed is not None:
        cfg.seed = seed
    if output is not None:
        cfg.output_dir = output
    if n_dir is not None:
        cfg.params.n_dir = n_dir
        cfg.params.validate()
    if checkpoint_every is not None:
        cfg.checkpoint_every = checkpoint_every
    return cfg


@click.group()
def main():
    """Surface reflectivity optimization toolkit."""
    _apply_thread_cap()


CONFIG_OPT = click.option(
    "--config", "config_path", type=click.Path(), default=None,
    help="TOML run configuration.",
)
SEED_OPT = click.option("--seed", type=int, default=None)
OUTPUT_OPT = click.option("--output", type=click.Path(), default=None)
NDIR_OPT = click.option("--n-dir", type=int, default=None)


@main.command("optimize")
@CONFIG_OPT
@SEED_OPT
@OUTPUT_OPT
@NDIR_OPT
@click.option("--checkpoint-every", type=int, default=None)
def cmd_optimize(config_path, seed, output, n_dir, checkpoint_every):
    """Run the full schedule and write all artifacts to the output directory."""
    try:
        cfg = _resolve_config(config_path, seed, output, n_dir, checkpoint_every)
        mesh = _load_input(cfg.input_path)
    except (ConfigError, MeshError, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"

    def checkpoint(snap) -> bool:
        if snap["iteration"] > 0 and snap["iteration"] % cfg.checkpoint_every == 0:
            ckpt_dir.mkdir(exist_ok=True)
            m = Mesh(snap["vertices"], snap["faces"], snap["vertices"])
            save_mesh(m, ckpt_dir / f"checkpoint_{snap['iteration']:05d}.obj")
        return True

    try:
        final, state = optimize.run_schedule(
            mesh, cfg.spec, cfg.params, cfg.brdf, cfg.band, cfg.seed,
            callbacks=[checkpoint], emitter_radiance=cfg.emitter_radiance,
        )
        save_mesh(final, out / "final.obj")
        report.write_history_csv(state.energy_history, out / "history.csv")
        report.write_split_report_csv(state, out / "split_report.csv")
        dump_config(cfg, out / "config.toml")
        report.render_history_figures(state.energy_history, out)
        if state.face_energy is not None:
            report.render_heatmap(
                final, state.face_energy, out / "face_energy.png",
                view_dir=cfg.render.camera, image_size=cfg.render.image_size,
                title="per-face reflectivity energy",
            )
    except Exception as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    rows = state.energy_history
    if rows:
        click.echo(
            f"E_refl {rows[0]['E_refl']:.6g} -> {rows[-1]['E_refl']:.6g} "
            f"over {len(rows)} updates; artifacts in {out}"
        )
    else:
        click.echo(f"no-op schedule; artifacts in {out}")


@main.command("evaluate")
@click.argument("mesh_path", type=str)
@CONFIG_OPT
@SEED_OPT
@NDIR_OPT
@click.option("--repeats", type=int, default=8, show_default=True,
              help="Independent estimates used for the standard error.")
@click.option("--dump-per-face", type=click.Path(), default=None)
@click.option("--render", "render_path", type=click.Path(), default=None,
              help="Write a retro-radiance heatmap PNG from the config camera.")
def cmd_evaluate(mesh_path, config_path, seed, n_dir, repeats, dump_per_face,
                 render_path):
    """Print the reflectivity energy of MESH_PATH with Monte Carlo error."""
    try:
        cfg = _resolve_config(config_path, seed, None, n_dir, None)
        mesh = _load_input(mesh_path)
        if repeats < 2:
            raise ConfigError("--repeats must be >= 2")
    except (ConfigError, MeshError, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    try:
        scene = build_scene(mesh, cfg.brdf, cfg.band, cfg.emitter_radiance)
        estimates = []
        for r in range(repeats):
            fe = per_face_energy(
                scene, cfg.spec, seed=cfg.seed + r,
                n_dir=cfg.params.n_dir, n_path=cfg.params.n_path,
            )
            estimates.append(fe)
        totals = np.array([fe.sum() for fe in estimates])
        mean = float(totals.mean())
        stderr = float(totals.std(ddof=1) / np.sqrt(repeats))
        click.echo(f"E_refl = {mean:.6g} +/- {stderr:.3g} "
                   f"(n_dir={cfg.params.n_dir}, repeats={repeats})")
        if dump_per_face:
            fe_mean = np.mean(estimates, axis=0)
            with open(dump_per_face, "w") as fh:
                fh.write("face,E_refl\n")
                for i, v in enumerate(fe_mean):
                    fh.write(f"{i},{float(v)!r}\n")
        if render_path:
            cam = np.asarray(cfg.render.camera, dtype=float)
            cam = cam / np.linalg.norm(cam)
            centers = (
                scene.v0 + scene.e1 / 3.0 + scene.e2 / 3.0
            )
            vals = np.zeros(mesh.num_faces)
            for k in range(mesh.num_faces):
                if scene.normals[k] @ cam <= 0:
                    continue
                vals[k] = radiance(
                    scene, centers[k], k, cam, cam,
                    seed=cfg.seed, n_path=cfg.params.n_path,
                )
            report.render_heatmap(
                mesh, vals, render_path, view_dir=cam,
                image_size=cfg.render.image_size, title="retro radiance",
            )
    except Exception as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


STRATEGIES = ("ours", "direct", "laplacian", "bilaplacian")


@main.command("compare-baselines")
@CONFIG_OPT
@SEED_OPT
@OUTPUT_OPT
@click.option("--strategy", "strategies", multiple=True,
              type=click.Choice(STRATEGIES),
              help="Restrict to specific strategies (repeatable).")
@click.option("--updates", type=int, default=15, show_default=True)
def cmd_compare_baselines(config_path, seed, output, strategies, updates):
    """Run all optimization strategies on common seeds and tabulate metrics."""
    try:
        cfg = _resolve_config(config_path, seed, output, None, None)
        mesh = _load_input(cfg.input_path)
    except (ConfigError, MeshError, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    chosen = strategies or STRATEGIES
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    try:
        initial_e = _quick_energy(mesh, cfg)
        for name in chosen:
            final, state, degenerated = _run_strategy(name, mesh, cfg, updates)
            try:
                final_e = _quick_energy(final, cfg)
            except Exception:
                final_e = float("nan")  # unreportable on a collapsed mesh
            rows.append(
                {
                    "strategy": name,
                    "seed": cfg.seed,
                    "updates": state.iteration,
                    "initial_E": initial_e,
                    "final_E": final_e,
                    "rel_cell_area_diff": optimize.relative_cell_area_diff(final),
                    "mean_vertex_disp": optimize.mean_vertex_displacement(final),
                    "degenerated": degenerated,
                }
            )
        report.write_comparison_csv(rows, out / "comparison.csv")
    except Exception as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    for row in rows:
        click.echo(
            f"{row['strategy']:>12}: E {row['initial_E']:.4g} -> "
            f"{row['final_E']:.4g}, area diff {row['rel_cell_area_diff']:.4g}, "
            f"disp {row['mean_vertex_disp']:.4g}"
            + ("  [degenerated]" if row["degenerated"] else "")
        )


def _quick_energy(mesh: Mesh, cfg: RunConfig) -> float:
    scene = build_scene(mesh, cfg.brdf, cfg.band, cfg.emitter_radiance)
    return float(
        per_face_energy(
            scene, cfg.spec, seed=cfg.seed + 7919,
            n_dir=cfg.params.n_dir, n_path=cfg.params.n_path,
        ).sum()
    )


def _run_strategy(name: str, mesh: Mesh, cfg: RunConfig, updates: int):
    from dataclasses import replace as _replace

    degenerated = False
    if name == "ours":
        half = updates // 2
        params = _replace(
            cfg.params,
            stage_iters=(half, updates - half, 0),
            split_fraction=0.0,
        )
        final, state = optimize.run_schedule(
            mesh, cfg.spec, params, cfg.brdf, cfg.band, cfg.seed,
            emitter_radiance=cfg.emitter_radiance,
        )
        return final, state, degenerated
    kwargs = dict(
        spec=cfg.spec, params=cfg.params, brdf=cfg.brdf, band=cfg.band,
        seed=cfg.seed, n_updates=updates, emitter_radiance=cfg.emitter_radiance,
    )
    try:
        if name == "direct":
            final, state = optimize.baseline_vertex_descent(mesh, **kwargs)
        elif name == "laplacian":
            final, state = optimize.baseline_preconditioned(mesh, order=1, **kwargs)
        else:
            final, state = optimize.baseline_preconditioned(mesh, order=2, **kwargs)
    except optimize.MeshDegenerationError as exc:
        # the failure mode is part of the comparison; report what survived
        degenerated = True
        state = exc.state
        final = state.mesh if state is not None else mesh
    return final, state, degenerated


@main.command("serve")
@CONFIG_OPT
@SEED_OPT
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def cmd_serve(config_path, seed, port, host):
    """Start the steering endpoint with the optimizer paused, awaiting commands."""
    import threading

    import uvicorn

    from .session import SessionController, create_app

    try:
        cfg = _resolve_config(config_path, seed, None, None, None)
        mesh = _load_input(cfg.input_path)
    except (ConfigError, MeshError, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    controller = SessionController(cfg.params, checkpoint_dir=out / "checkpoints")
    app = create_app(controller)

    def work():
        final, state = controller.run(
            mesh, cfg.spec, cfg.brdf, cfg.band, cfg.seed,
            emitter_radiance=cfg.emitter_radiance, start_paused=True,
        )
        save_mesh(final, out / "final.obj")
        report.write_history_csv(state.energy_history, out / "history.csv")

    thread = threading.Thread(target=work, daemon=True)
    thread.start()
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except SystemExit:
        raise
    except Exception as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    finally:
        controller.terminated = True


if __name__ == "__main__":
    main()
