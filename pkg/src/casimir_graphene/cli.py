"""Command-line front end.

Subcommands write a CSV table (force gradients in uN/m) and a JSON sidecar
with every parameter needed to rerun the computation.  Settings come from
defaults, then an optional ``key=value`` config file, then the command
line, later sources winning.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 convergence
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, calibration, engine, materials
from .polarization import GrapheneParams, QuadratureError, tensor_batch

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3, 4

BUILTIN_METALS = {"drude-au": materials.gold_drude, "sample-au": None}
BUILTIN_SUBSTRATES = {"oscillator-sio2": materials.silica_oscillators, "sample-sio2": None}
BUNDLED_DATASET = "calibration_synthetic.json"


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    """Merged settings for one CLI run (lengths in the units of their names)."""

    temperature: float = 294.0
    mu_ev: float = engine.CENTRAL_MU
    delta_ev: float = engine.CENTRAL_DELTA
    vf_ratio: float = 1.0 / 300.0
    a_start_nm: float = 250.0
    a_stop_nm: float = 590.0
    a_step_nm: float = 10.0
    sphere_radius_um: float = 60.35
    roughness_sphere_nm: float = 0.9
    roughness_plate_nm: float = 1.5
    metal_table: str = "drude-au"
    substrate_table: str = "oscillator-sio2"
    band: bool = False
    zero_t: bool = False
    padding: float = 0.0
    seed: int = 0
    threads: int = 0
    out: str = ""
    dataset: str = "bundled"
    l_max: int = 20
    k_min: float = 1e5
    k_max: float = 1e8
    k_count: int = 7

    def __post_init__(self):
        if not self.temperature >= 0:
            raise ConfigError("temperature must be >= 0")
        if not (self.a_step_nm > 0 and self.a_start_nm > 0 and self.a_stop_nm >= self.a_start_nm):
            raise ConfigError("separation grid must be non-empty and increasing")
        if not self.sphere_radius_um > 0:
            raise ConfigError("sphere radius must be > 0")
        if self.mu_ev < 0 or self.delta_ev < 0:
            raise ConfigError("mu and delta must be >= 0")
        if not (0 <= self.padding < 1):
            raise ConfigError("padding must lie in [0, 1)")
        if self.l_max < 0 or self.k_count < 1 or not 0 < self.k_min <= self.k_max:
            raise ConfigError("bad spectral dump grid")

    def grid_nm(self) -> np.ndarray:
        """Separations in nm: start, start + step, ... up to stop."""
        span = self.a_stop_nm - self.a_start_nm
        n = int(math.floor(span / self.a_step_nm + 1e-9))
        return np.round(self.a_start_nm + self.a_step_nm * np.arange(n + 1), 9)

    def grid(self) -> np.ndarray:
        """Separations in m."""
        return self.grid_nm() / 1e9

    @property
    def effective_temperature(self) -> float:
        return 0.0 if self.zero_t else self.temperature


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CASTS = {"float": float, "int": int, "str": str, "bool": _bool}


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; '#' starts a comment, dashes in keys allowed."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{no}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES or key == "threads":
            raise ConfigError(f"{path}:{no}: unknown key {key!r}")
        out[key] = value
    return out


def merge_config(file_values: dict, cli_values: dict) -> RunConfig:
    merged = {**file_values, **{k: v for k, v in cli_values.items() if v is not None}}
    typed = {}
    for key, value in merged.items():
        try:
            typed[key] = _CASTS[_TYPES[key]](value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return RunConfig(**typed)


# --------------------------------------------------------------------------
# Inputs
# --------------------------------------------------------------------------

def _load_material(name: str, metal: bool):
    builtins = BUILTIN_METALS if metal else BUILTIN_SUBSTRATES
    if name in builtins:
        factory = builtins[name]
        if factory is not None:
            return factory()
        table = materials.sample_table("gold" if metal else "silica")
    else:
        try:
            table = materials.read_optical_table(name, material_label=Path(name).stem)
        except materials.OpticalDataError as exc:
            raise DataError(f"material load failed for {name}: {exc}") from exc
        except (OSError, UnicodeDecodeError) as exc:
            raise DataError(f"material load failed for {name}: {exc}") from exc
    return materials.Tabulated(table, materials.GOLD_DRUDE if metal else None)


def _check_paths(cfg: RunConfig, command: str):
    paths = [p for p in (cfg.metal_table, cfg.substrate_table)
             if p not in BUILTIN_METALS and p not in BUILTIN_SUBSTRATES]
    if command == "calibrate" and cfg.dataset not in ("bundled", "synthetic"):
        paths.append(cfg.dataset)
    for p in paths:
        if not Path(p).is_file():
            raise ConfigError(f"file not found: {p}")


def _system(cfg: RunConfig) -> engine.SystemSpec:
    geom = engine.ExperimentGeometry(cfg.a_start_nm * 1e-9, cfg.sphere_radius_um * 1e-6,
                                     cfg.roughness_sphere_nm * 1e-9, cfg.roughness_plate_nm * 1e-9)
    return engine.SystemSpec(geom, _load_material(cfg.metal_table, True),
                             _load_material(cfg.substrate_table, False),
                             GrapheneParams(cfg.mu_ev, cfg.delta_ev, cfg.vf_ratio),
                             cfg.effective_temperature)


def _workers(cfg: RunConfig) -> int:
    return cfg.threads if cfg.threads > 0 else (os.cpu_count() or 1)


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_outputs(cfg: RunConfig, command: str, header, rows, sidecar: dict, default_name: str):
    out = Path(cfg.out or default_name)
    lines = [f"# schema_version={SCHEMA_VERSION} command={command}", ",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    params = {k: v for k, v in asdict(cfg).items() if k not in ("threads", "out")}
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "package_version": __version__,
           "parameters": params, "columns": list(header), **sidecar}
    out.with_suffix(".json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return out


def _provenance(spec: engine.SystemSpec, settings: engine.QuadratureSettings) -> dict:
    return {"metal_model": materials.model_to_dict(spec.metal),
            "substrate_model": materials.model_to_dict(spec.substrate),
            "quadrature": asdict(settings)}


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def run_gradient(cfg: RunConfig, band_only: bool = False) -> int:
    spec = _system(cfg)
    settings = engine.QuadratureSettings()
    grid = cfg.grid()
    header = ["a_nm"]
    cols = []
    extra = {}
    if not band_only:
        res = engine.sweep("gradient", spec, grid, settings, True, _workers(cfg))
        header += ["fprime_uN_per_m", "err_uN_per_m"]
        cols += [[r.value * 1e6 for r in res], [r.estimated_numerical_error * 1e6 for r in res]]
        extra["gradient_N_per_m"] = [r.value for r in res]
        extra["matsubara_terms"] = [r.matsubara_terms_used for r in res]
    if band_only or cfg.band:
        bands = engine.sweep("band", spec, grid, settings, cfg.padding, _workers(cfg))
        header += ["band_lower_uN_per_m", "band_upper_uN_per_m"]
        cols += [[b[0] * 1e6 for b in bands], [b[1] * 1e6 for b in bands]]
        extra["band_N_per_m"] = [list(b) for b in bands]
    rows = [[a, *vals] for a, *vals in zip(cfg.grid_nm(), *cols)]
    command = "band" if band_only else "gradient"
    _write_outputs(cfg, command, header, rows, {**_provenance(spec, settings), "results": extra},
                   f"{command}.csv")
    return EXIT_OK


def run_decompose(cfg: RunConfig) -> int:
    if cfg.effective_temperature <= 0:
        raise ConfigError("decompose needs temperature > 0")
    spec = _system(cfg)
    settings = engine.QuadratureSettings()
    grid = cfg.grid()
    res = engine.sweep("decompose", spec, grid, settings, None, _workers(cfg))
    rows = [[a, d.thermal_fraction, d.implicit_fraction, d.explicit_fraction] for a, d in zip(cfg.grid_nm(), res)]
    side = {**_provenance(spec, settings), "results": [asdict(d) for d in res]}
    _write_outputs(cfg, "decompose", ["a_nm", "thermal_fraction", "implicit_fraction", "explicit_fraction"],
                   rows, side, "decompose.csv")
    return EXIT_OK


def _bundled_dataset_text() -> str:
    return resources.files("casimir_graphene.data").joinpath(BUNDLED_DATASET).read_text(encoding="utf-8")


def synthetic_dataset(seed: int, radius: float = 60.35e-6, step: float = 1e-9) -> calibration.Dataset:
    """The dataset used for the bundled file: 1 nm grid, PLL-level noise."""
    truth = calibration.CalibrationTruth()
    grid = calibration.default_grid(truth.z0, step=step)
    curves = calibration.synthesize_dataset(truth, calibration.casimir_standin, calibration.default_voltages(),
                                            calibration.PLL_NOISE, grid, radius, seed=seed)
    return calibration.Dataset(tuple(curves), radius, calibration.PLL_NOISE, truth)


def run_calibrate(cfg: RunConfig) -> int:
    if cfg.dataset == "synthetic":
        ds = synthetic_dataset(cfg.seed, cfg.sphere_radius_um * 1e-6)
    else:
        text = _bundled_dataset_text() if cfg.dataset == "bundled" else Path(cfg.dataset).read_text(encoding="utf-8")
        try:
            ds = calibration.dataset_from_json(text, strict=False)
        except calibration.CalibrationError as exc:
            raise DataError(str(exc)) from exc
    for i, msg in ds.errors:
        print(f"error [dataset]: curve {i}: {msg}", file=sys.stderr)
    try:
        result = calibration.calibrate(ds.curves, ds.sphere_radius, sigma=ds.noise)
    except calibration.CalibrationError as exc:
        raise DataError(f"calibration failed: {exc}") from exc
    line = calibration.drift_line_fit(result.v0_series)
    rows = [[a * 1e9, v, c] for (a, v), (_, c) in zip(result.v0_series, result.curvature_series)]
    side = {"result": result.to_dict(), "drift_line": asdict(line),
            "truth": None if ds.truth is None else asdict(ds.truth),
            "curve_errors": [{"index": i, "message": m} for i, m in ds.errors],
            "sphere_radius": ds.sphere_radius}
    _write_outputs(cfg, "calibrate", ["a_nm", "v0_V", "curvature_rad_per_s_V2"], rows, side, "calibrate.csv")
    print(f"V0 = {result.v0:.6f} V  z0 = {result.z0 * 1e9:.3f} nm  C = {result.c_factor:.6e} s/kg  "
          f"drift: d = {line.d:.6f} V, theta = {line.theta * 1e-9:.3e} V/nm")
    return EXIT_DATA if ds.errors else EXIT_OK


def run_epsilon(cfg: RunConfig) -> int:
    if cfg.temperature <= 0:
        raise ConfigError("epsilon dump needs temperature > 0")
    metal = _load_material(cfg.metal_table, True)
    sub = _load_material(cfg.substrate_table, False)
    rows = []
    for l in range(cfg.l_max + 1):
        rows.append([l, engine.matsubara_frequency(l, cfg.temperature),
                     materials.eps_at_matsubara(metal, cfg.temperature, l),
                     materials.eps_at_matsubara(sub, cfg.temperature, l)])
    side = {"metal_model": materials.model_to_dict(metal), "substrate_model": materials.model_to_dict(sub)}
    _write_outputs(cfg, "epsilon", ["l", "xi_rad_per_s", "eps_metal", "eps_substrate"], rows, side, "epsilon.csv")
    return EXIT_OK


def run_pi(cfg: RunConfig) -> int:
    if cfg.temperature <= 0:
        raise ConfigError("pi dump needs temperature > 0 to fix the Matsubara frequencies")
    g = GrapheneParams(cfg.mu_ev, cfg.delta_ev, cfg.vf_ratio)
    ks = np.geomspace(cfg.k_min, cfg.k_max, cfg.k_count)
    rows = []
    for l in range(cfg.l_max + 1):
        xi = engine.matsubara_frequency(l, cfg.temperature)
        p00, p = tensor_batch(xi, ks, g, cfg.effective_temperature)
        rows += [[l, xi, k, a, b] for k, a, b in zip(ks, p00, p)]
    _write_outputs(cfg, "pi", ["l", "xi_rad_per_s", "k_per_m", "pi00_J_s_per_m", "pi_J_s_per_m3"], rows,
                   {"tensor_temperature": cfg.effective_temperature}, "pi.csv")
    return EXIT_OK


COMMANDS = {
    "gradient": run_gradient,
    "band": lambda cfg: run_gradient(cfg, band_only=True),
    "decompose": run_decompose,
    "calibrate": run_calibrate,
    "epsilon": run_epsilon,
    "pi": run_pi,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", help="key=value settings file (overridden by flags)")
    common.add_argument("--out", default=S, help="CSV output path; the JSON sidecar sits next to it")
    common.add_argument("--threads", type=int, default=S, help="worker processes (default: all CPUs)")
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--temperature", type=float, default=S, help="K")
    common.add_argument("--mu-ev", type=float, default=S, help="graphene chemical potential")
    common.add_argument("--delta-ev", type=float, default=S, help="graphene energy gap")
    common.add_argument("--a-start-nm", type=float, default=S)
    common.add_argument("--a-stop-nm", type=float, default=S)
    common.add_argument("--a-step-nm", type=float, default=S)
    common.add_argument("--sphere-radius-um", type=float, default=S)
    common.add_argument("--metal-table", default=S, help="CSV file, 'drude-au' or 'sample-au'")
    common.add_argument("--substrate-table", default=S, help="CSV file, 'oscillator-sio2' or 'sample-sio2'")
    common.add_argument("--band", action="store_const", const=True, default=S, help="add theory band columns")
    common.add_argument("--padding", type=float, default=S, help="fractional band widening")
    common.add_argument("--zero-t", action="store_const", const=True, default=S,
                        help="use the zero-temperature formulation")
    common.add_argument("--dataset", default=S, help="calibration JSON, 'bundled' or 'synthetic'")
    common.add_argument("--l-max", type=int, default=S)
    common.add_argument("--k-min", type=float, default=S, help="1/m")
    common.add_argument("--k-max", type=float, default=S, help="1/m")
    common.add_argument("--k-count", type=int, default=S)

    parser = argparse.ArgumentParser(prog="casimir-graphene",
                                     description="Casimir force gradients for graphene-coated plates.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gradient": "force gradient over a separation grid",
        "band": "upper and lower theory lines",
        "decompose": "thermal fraction and its implicit/explicit split",
        "calibrate": "electrostatic calibration of a shift dataset",
        "epsilon": "permittivity at Matsubara frequencies",
        "pi": "polarization tensor table",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    try:
        file_values = read_config_file(config_path) if config_path else {}
        cfg = merge_config(file_values, args)
        _check_paths(cfg, command)
        return COMMANDS[command](cfg)
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, materials.OpticalDataError, calibration.CalibrationError) as exc:
        print(f"error [data]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (engine.ConvergenceError, QuadratureError) as exc:
        print(f"error [convergence]: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except ValueError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
