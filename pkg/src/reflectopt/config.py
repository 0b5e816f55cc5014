"""TOML run configuration: strict parsing, default materialization, round-trip.

Unknown keys are rejected rather than ignored so a typo in a hyperparameter
name fails loudly instead of silently running with defaults. `dump_config`
re-emits the fully resolved configuration so a run directory always carries
everything needed to reproduce the run.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .energy import EnergyKind, ReflectivitySpec
from .optimize import HyperParams
from .trace import DirectionalBand, PhongParams


class ConfigError(ValueError):
    pass


@dataclass
class RenderOptions:
    image_size: int = 512
    camera: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.image_size < 16:
            raise ConfigError("render.image_size must be >= 16")
        c = np.asarray(self.camera, dtype=float)
        if c.shape != (3,) or np.linalg.norm(c) < 1e-12:
            raise ConfigError("render.camera must be a nonzero 3-vector")


@dataclass
class RunConfig:
    input_path: str = "builtin:icosphere"
    output_dir: str = "out"
    seed: int = 0
    checkpoint_every: int = 10
    emitter_radiance: float = 0.5
    spec: ReflectivitySpec = field(default_factory=ReflectivitySpec)
    brdf: PhongParams = field(default_factory=PhongParams)
    band: DirectionalBand = field(default_factory=DirectionalBand)
    params: HyperParams = field(default_factory=HyperParams)
    render: RenderOptions = field(default_factory=RenderOptions)

    def __post_init__(self):
        if self.checkpoint_every < 1:
            raise ConfigError("run.checkpoint_every must be >= 1")
        if self.emitter_radiance <= 0:
            raise ConfigError("run.emitter_radiance must be positive")
        if self.seed < 0:
            raise ConfigError("run.seed must be non-negative")


# builtin fixture names resolvable without a mesh file on disk
BUILTIN_FIXTURES = ("icosphere", "plate", "bent_ridge", "cube", "octahedron")


def _take(table: dict, section: str, known: dict):
    """Pop known keys with defaults; reject anything left over."""
    out = {}
    for key, default in known.items():
        out[key] = table.pop(key, default)
    if table:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(table))}")
    return out


def _energy_from_table(t: dict) -> ReflectivitySpec:
    vals = _take(
        t, "energy",
        {"kind": "stealth", "target": None, "l_star": 0.0, "epsilon": 1e-3},
    )
    try:
        kind = EnergyKind(vals["kind"])
    except ValueError as exc:
        raise ConfigError(f"unknown energy kind {vals['kind']!r}") from exc
    target = vals["target"]
    if target is not None:
        arr = np.asarray(target, dtype=float)
        if arr.shape == (3,):
            target = tuple(float(x) for x in arr)
        elif arr.shape == (2, 3):
            target = (tuple(map(float, arr[0])), tuple(map(float, arr[1])))
        else:
            raise ConfigError("energy.target must be a point or a 2-point segment")
    try:
        return ReflectivitySpec(
            kind=kind, target_geometry=target,
            l_star=float(vals["l_star"]), epsilon=float(vals["epsilon"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _band_from_table(t: dict) -> DirectionalBand:
    vals = _take(
        t, "band",
        {"theta0_deg": 20.0, "axis": [0.0, 0.0, 1.0], "fixed_direction": None},
    )
    fixed = vals["fixed_direction"]
    if fixed is not None:
        fixed = tuple(float(x) for x in fixed)
    try:
        return DirectionalBand(
            theta0=float(np.deg2rad(vals["theta0_deg"])),
            axis=tuple(float(x) for x in vals["axis"]),
            fixed_direction=fixed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path: str | Path) -> RunConfig:
    """Parse and validate a TOML config file; referenced paths must exist."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return config_from_dict(data, base_dir=path.parent)


def config_from_dict(data: dict, base_dir: Path | None = None) -> RunConfig:
    data = dict(data)
    run = _take(
        data.pop("run", {}), "run",
        {
            "input": "builtin:icosphere",
            "output": "out",
            "seed": 0,
            "checkpoint_every": 10,
            "emitter_radiance": 0.5,
        },
    )
    energy = _energy_from_table(dict(data.pop("energy", {})))
    brdf_vals = _take(
        dict(data.pop("brdf", {})), "brdf", {"k_d": 0.1, "k_s": 0.9, "n_exp": 30.0}
    )
    band = _band_from_table(dict(data.pop("band", {})))
    hyper_vals = _take(
        dict(data.pop("hyper", {})), "hyper",
        {
            "eta": 200.0,
            "beta": 0.1,
            "lambda_style": 1000.0,
            "tv_alpha": 250.0,
            "n_gradient": 8,
            "n_path": 8,
            "n_dir": 16,
            "theta0_deg": 20.0,
            "stage_iters": [30, 30, 30],
            "split_fraction": 0.05,
            "precondition_mu": 10.0,
        },
    )
    render_vals = _take(
        dict(data.pop("render", {})), "render",
        {"image_size": 512, "camera": [0.0, 0.0, 1.0]},
    )
    if data:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(data))}")

    input_path = str(run["input"])
    if not input_path.startswith("builtin:"):
        p = Path(input_path)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"input mesh not found: {p}")
        input_path = str(p)
    elif input_path.removeprefix("builtin:") not in BUILTIN_FIXTURES:
        raise ConfigError(
            f"unknown builtin fixture {input_path!r}; "
            f"choose from {', '.join(BUILTIN_FIXTURES)}"
        )

    try:
        brdf = PhongParams(
            k_d=float(brdf_vals["k_d"]),
            k_s=float(brdf_vals["k_s"]),
            n_exp=float(brdf_vals["n_exp"]),
        )
        params = HyperParams(
            eta=float(hyper_vals["eta"]),
            beta=float(hyper_vals["beta"]),
            lambda_style=float(hyper_vals["lambda_style"]),
            tv_alpha=float(hyper_vals["tv_alpha"]),
            n_gradient=int(hyper_vals["n_gradient"]),
            n_path=int(hyper_vals["n_path"]),
            n_dir=int(hyper_vals["n_dir"]),
            theta0=float(np.deg2rad(hyper_vals["theta0_deg"])),
            stage_iters=tuple(int(n) for n in hyper_vals["stage_iters"]),
            split_fraction=float(hyper_vals["split_fraction"]),
            precondition_mu=float(hyper_vals["precondition_mu"]),
        )
        render = RenderOptions(
            image_size=int(render_vals["image_size"]),
            camera=tuple(float(x) for x in render_vals["camera"]),
        )
        return RunConfig(
            input_path=input_path,
            output_dir=str(run["output"]),
            seed=int(run["seed"]),
            checkpoint_every=int(run["checkpoint_every"]),
            emitter_radiance=float(run["emitter_radiance"]),
            spec=energy,
            brdf=brdf,
            band=band,
            params=params,
            render=render,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)} to TOML")


def config_to_dict(cfg: RunConfig) -> dict:
    """Fully materialized (defaults included) nested-dict form."""
    spec = cfg.spec
    energy: dict = {
        "kind": spec.kind.value,
        "l_star": spec.l_star,
        "epsilon": spec.epsilon,
    }
    if spec.target_geometry is not None:
        tg = spec.target_geometry
        if isinstance(tg, tuple) and len(tg) == 2 and np.shape(tg[0]) == (3,):
            energy["target"] = [list(tg[0]), list(tg[1])]
        else:
            energy["target"] = list(np.asarray(tg, dtype=float).reshape(3))
    band: dict = {
        "theta0_deg": float(np.rad2deg(cfg.band.theta0)),
        "axis": list(cfg.band.axis),
    }
    if cfg.band.fixed_direction is not None:
        band["fixed_direction"] = list(cfg.band.fixed_direction)
    return {
        "run": {
            "input": cfg.input_path,
            "output": cfg.output_dir,
            "seed": cfg.seed,
            "checkpoint_every": cfg.checkpoint_every,
            "emitter_radiance": cfg.emitter_radiance,
        },
        "energy": energy,
        "brdf": {
            "k_d": cfg.brdf.k_d,
            "k_s": cfg.brdf.k_s,
            "n_exp": cfg.brdf.n_exp,
        },
        "band": band,
        "hyper": {
            "eta": cfg.params.eta,
            "beta": cfg.params.beta,
            "lambda_style": cfg.params.lambda_style,
            "tv_alpha": cfg.params.tv_alpha,
            "n_gradient": cfg.params.n_gradient,
            "n_path": cfg.params.n_path,
            "n_dir": cfg.params.n_dir,
            "theta0_deg": float(np.rad2deg(cfg.params.theta0)),
            "stage_iters": list(cfg.params.stage_iters),
            "split_fraction": cfg.params.split_fraction,
            "precondition_mu": cfg.params.precondition_mu,
        },
        "render": {
            "image_size": cfg.render.image_size,
            "camera": list(cfg.render.camera),
        },
    }


def dump_config(cfg: RunConfig, path: str | Path):
    """Write the resolved config as TOML (semantic round-trip with parse)."""
    lines = []
    for section, table in config_to_dict(cfg).items():
        lines.append(f"[{section}]")
        for key, val in table.items():
            lines.append(f"{key} = {_toml_value(val)}")
        lines.append("")
    Path(path).write_text("\n".join(lines))
