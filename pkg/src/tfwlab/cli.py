"""Command-line front end: ``tfwlab <command> [--config PATH | --preset NAME] [--out DIR]``.

Commands write data files only (CSV and JSON) into the output directory.
Exit status is 0 on success, 1 if a solve failed to converge and 2 on
invalid input. Run timestamps live in ``metadata.json`` so that every other
file is byte-identical across repeated runs.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    DEFECT_CSV_COLUMNS,
    TRUNCATION_CSV_COLUMNS,
    DefectFields,
    build_report,
    fit_decay,
    relative_energy,
    variational_cross_check,
)
from .functional import ModelParams
from .grid import Grid1D
from .nuclear import (
    NuclearDensity,
    gaussian_comb,
    gaussian_perturbation,
    jellium,
    load_density,
    superpose,
    uniform_bump,
    zero_perturbation,
)
from .solver import TRACE_COLUMNS, ConvergenceError, SolverOptions, staggered_solve, uniqueness_probe

log = logging.getLogger("tfwlab")

FIELDS_CSV_COLUMNS = ("z", "m", "u", "phi")
CONVERGENCE_CSV_COLUMNS = ("L", "gamma_L", "u_diff")

PRESETS = {
    "jellium": {
        "grid": {"half_width": 5.0, "num_points": 1024},
        "nuclear": {"kind": "jellium", "rho0": 1.0},
    },
    "jellium-bump": {
        "grid": {"half_width": 10.0, "num_points": 2048},
        "nuclear": {
            "kind": "jellium",
            "rho0": 1.0,
            "perturbation": {"kind": "bump", "center": 0.0, "width": 0.05, "height": 10.0},
        },
    },
    "comb": {
        "grid": {"half_width": 10.0, "num_points": 2000},
        "nuclear": {"kind": "comb", "sigma": 0.1, "period": 1.0},
    },
    "comb-defect": {
        "grid": {"half_width": 10.0, "num_points": 2000},
        "nuclear": {
            "kind": "comb",
            "sigma": 0.1,
            "period": 1.0,
            "perturbation": {"kind": "gaussian", "amplitude": 0.5, "sigma": 0.1},
        },
    },
}

SECTIONS = {"grid", "model", "nuclear", "solver", "analysis", "output"}
GRID_KEYS = {"half_width", "num_points"}
MODEL_KEYS = {"preset", "c_w", "c_tf", "c_d"}
ANALYSIS_KEYS = {"truncation_widths", "boundary_buffer", "fit_derivatives", "variational"}
OUTPUT_KEYS = {"directory", "formats"}
NUCLEAR_KEYS = {
    "jellium": {"rho0"},
    "comb": {"sigma", "period"},
    "file": {"path", "defect_half_width"},
}
PERTURBATION_KEYS = {
    "bump": {"center", "width", "height"},
    "gaussian": {"amplitude", "sigma"},
    "zero": set(),
    "file": {"path", "defect_half_width"},
}


class ConfigError(ValueError):
    """Invalid configuration; reported with exit status 2."""


@dataclass(frozen=True)
class RunConfig:
    grid: Grid1D
    params: ModelParams
    m1: NuclearDensity
    nu: NuclearDensity | None
    solver: SolverOptions
    analysis: dict
    output_dir: Path
    raw: dict
    base_dir: Path = Path(".")


# --- configuration --------------------------------------------------------


def _check_keys(section: dict, allowed: set, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a JSON object")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing key {key!r} in {where}")
    return section[key]


def _number(section: dict, key: str, where: str, default=None) -> float:
    value = section.get(key, default) if default is not None else _require(section, key, where)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{where}.{key} must be a finite number, got {value!r}")
    return float(value)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _build_model(section: dict) -> ModelParams:
    _check_keys(section, MODEL_KEYS, "model")
    preset = section.get("preset", "tfw")
    if preset not in ("tfw", "tfwd"):
        raise ConfigError(f"model.preset must be 'tfw' or 'tfwd', got {preset!r}")
    base = ModelParams.tfwd() if preset == "tfwd" else ModelParams.tfw()
    try:
        return ModelParams(
            _number(section, "c_w", "model", base.c_w),
            _number(section, "c_tf", "model", base.c_tf),
            _number(section, "c_d", "model", base.c_d),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_reference(section: dict, grid: Grid1D, base_dir: Path) -> NuclearDensity:
    kind = _require(section, "kind", "nuclear")
    if kind not in NUCLEAR_KEYS:
        raise ConfigError(f"nuclear.kind must be one of {sorted(NUCLEAR_KEYS)}, got {kind!r}")
    _check_keys(section, NUCLEAR_KEYS[kind] | {"kind", "perturbation"}, "nuclear")
    if kind == "jellium":
        return jellium(grid, _number(section, "rho0", "nuclear", 1.0))
    if kind == "comb":
        return gaussian_comb(grid, _number(section, "sigma", "nuclear"), _number(section, "period", "nuclear", 1.0))
    path = base_dir / str(_require(section, "path", "nuclear"))
    return load_density(path, grid, _number(section, "defect_half_width", "nuclear", 0.0))


def _build_perturbation(section: dict, grid: Grid1D, base_dir: Path, where: str) -> NuclearDensity:
    kind = _require(section, "kind", where)
    if kind not in PERTURBATION_KEYS:
        raise ConfigError(f"{where}.kind must be one of {sorted(PERTURBATION_KEYS)}, got {kind!r}")
    _check_keys(section, PERTURBATION_KEYS[kind] | {"kind"}, where)
    if kind == "bump":
        return uniform_bump(grid, _number(section, "center", where, 0.0), _number(section, "width", where),
                            _number(section, "height", where))
    if kind == "gaussian":
        return gaussian_perturbation(grid, _number(section, "amplitude", where), _number(section, "sigma", where))
    if kind == "zero":
        return zero_perturbation(grid)
    path = base_dir / str(_require(section, "path", where))
    return load_density(path, grid, _number(section, "defect_half_width", where), is_perturbation=True)


def build_config(raw: dict, base_dir: Path = Path("."), out: str | None = None) -> RunConfig:
    """Validate a configuration document and construct every object it describes.

    Raises:
        ConfigError: On unknown keys or values violating a precondition.
    """
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    _check_keys(raw, SECTIONS, "configuration")
    try:
        g = _require(raw, "grid", "configuration")
        _check_keys(g, GRID_KEYS, "grid")
        num_points = _require(g, "num_points", "grid")
        if isinstance(num_points, bool) or not isinstance(num_points, int):
            raise ConfigError(f"grid.num_points must be an integer, got {num_points!r}")
        grid = Grid1D(_number(g, "half_width", "grid"), num_points)
        params = _build_model(raw.get("model", {}))
        nuc = _require(raw, "nuclear", "configuration")
        m1 = _build_reference(nuc, grid, base_dir)
        nu = None
        if "perturbation" in nuc:
            nu = _build_perturbation(nuc["perturbation"], grid, base_dir, "nuclear.perturbation")
            superpose(m1, nu)
        solver_raw = raw.get("solver", {})
        if not isinstance(solver_raw, dict):
            raise ConfigError("solver must be a JSON object")
        try:
            solver = SolverOptions.from_dict(solver_raw)
        except KeyError as exc:
            raise ConfigError(f"{exc.args[0]} in solver") from exc
        except TypeError as exc:
            raise ConfigError(f"invalid solver section: {exc}") from exc
        analysis = raw.get("analysis", {})
        _check_keys(analysis, ANALYSIS_KEYS, "analysis")
        widths = analysis.get("truncation_widths")
        if widths is not None:
            if not isinstance(widths, list) or not all(
                isinstance(k, (int, float)) and not isinstance(k, bool) for k in widths
            ):
                raise ConfigError("analysis.truncation_widths must be a list of numbers")
            if any(b <= a for a, b in zip(widths, widths[1:])):
                raise ConfigError("analysis.truncation_widths must be strictly increasing")
        if analysis.get("fit_derivatives", 2) not in (0, 1, 2):
            raise ConfigError("analysis.fit_derivatives must be 0, 1 or 2")
        output = raw.get("output", {})
        _check_keys(output, OUTPUT_KEYS, "output")
        formats = output.get("formats", ["csv", "json"])
        if not isinstance(formats, list) or not set(formats) <= {"csv", "json"}:
            raise ConfigError("output.formats must be a list drawn from 'csv' and 'json'")
        out_dir = Path(out) if out else Path(output.get("directory", "tfwlab-out"))
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(grid, params, m1, nu, solver, dict(analysis), out_dir, raw, base_dir)


def load_raw_config(args) -> tuple[dict, Path]:
    raw: dict = {}
    base_dir = Path(".")
    if getattr(args, "preset", None):
        raw = copy.deepcopy(PRESETS[args.preset])
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        raw = _merge(raw, doc)
        base_dir = path.parent
    if not raw:
        raise ConfigError("give --config PATH or --preset NAME")
    if getattr(args, "model", None):
        raw.setdefault("model", {})["preset"] = args.model
    if getattr(args, "seed", None) is not None:
        raw.setdefault("solver", {})["seed"] = args.seed
    if getattr(args, "variational", False):
        raw.setdefault("analysis", {})["variational"] = True
    return raw, base_dir


# --- output ---------------------------------------------------------------


def write_table(path: Path, header, columns) -> None:
    rows = np.column_stack([np.asarray(c, dtype=float) for c in columns]) if columns else np.empty((0, 0))
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{x:.17g}" for x in row])


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, allow_nan=False) + "\n")


def write_metadata(out_dir: Path, command: str, started: float) -> None:
    write_json(out_dir / "metadata.json", {
        "command": command,
        "version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "elapsed_seconds": round(time.time() - started, 3),
    })


def validate_csv(path: Path, header) -> None:
    """Check header and that every row holds the right number of finite numbers."""
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != tuple(header):
        raise RuntimeError(f"{path.name}: header {rows[0] if rows else None} != {list(header)}")
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header) or not all(math.isfinite(float(x)) for x in row):
            raise RuntimeError(f"{path.name}: malformed row {i}")


def validate_json(path: Path, keys) -> None:
    doc = json.loads(path.read_text())
    missing = [k for k in keys if k not in doc]
    if missing:
        raise RuntimeError(f"{path.name}: missing fields {missing}")


def _prepare_out(cfg: RunConfig) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.output_dir


def _wants(cfg: RunConfig, fmt: str) -> bool:
    return fmt in cfg.raw.get("output", {}).get("formats", ["csv", "json"])


def _solve_payload(res, grid: Grid1D) -> dict:
    out = res.summary()
    out["energy_per_length"] = res.energy / grid.length
    return out


RESULT_KEYS = ("converged", "mu_final", "energy", "energy_per_length", "outer_iterations",
               "constraint_violation", "el_residual")
REPORT_KEYS = ("gamma", "truncated", "neutrality_defect", "decay_u", "decay_phi", "variational_value")


# --- commands -------------------------------------------------------------


def cmd_solve(cfg: RunConfig) -> int:
    m = superpose(cfg.m1, cfg.nu) if cfg.nu is not None else cfg.m1
    res = staggered_solve(m, cfg.params, cfg.solver)
    out = _prepare_out(cfg)
    written = []
    if _wants(cfg, "csv"):
        write_table(out / "fields.csv", FIELDS_CSV_COLUMNS,
                    [cfg.grid.coordinates, m.values, res.state.u.values, res.state.phi.values])
        res.write_trace(out / "trace.csv")
        written += [("fields.csv", FIELDS_CSV_COLUMNS), ("trace.csv", TRACE_COLUMNS)]
    if _wants(cfg, "json"):
        write_json(out / "result.json", _solve_payload(res, cfg.grid))
    for name, header in written:
        validate_csv(out / name, header)
    if _wants(cfg, "json"):
        validate_json(out / "result.json", RESULT_KEYS)
    log.info("%s; energy per length %.12g", res.message, res.energy / cfg.grid.length)
    return 0 if res.converged else 1


def _defect_solves(cfg: RunConfig, jobs: int):
    m2 = superpose(cfg.m1, cfg.nu)
    tasks = [(cfg.m1, cfg.params, cfg.solver), (m2, cfg.params, cfg.solver)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=2) as pool:
            return list(pool.map(_solve_args, tasks))
    return [_solve_args(t) for t in tasks]


def _solve_args(args):
    return staggered_solve(*args)


def _require_perturbation(cfg: RunConfig) -> None:
    if cfg.nu is None:
        raise ConfigError("this command needs nuclear.perturbation (or --perturbed PATH)")


def cmd_relative_energy(cfg: RunConfig, jobs: int = 1) -> int:
    _require_perturbation(cfg)
    r1, r2 = _defect_solves(cfg, jobs)
    out = _prepare_out(cfg)
    if _wants(cfg, "csv"):
        r1.write_trace(out / "trace_reference.csv")
        r2.write_trace(out / "trace_perturbed.csv")
    summary = {"reference": _solve_payload(r1, cfg.grid), "perturbed": _solve_payload(r2, cfg.grid)}
    if not (r1.converged and r2.converged):
        write_json(out / "summary.json", summary)
        log.error("solve did not converge: %s / %s", r1.message, r2.message)
        return 1
    d = DefectFields.from_results(r1, r2, cfg.nu, cfg.params)
    an = cfg.analysis
    variational = None
    if an.get("variational", False):
        variational, w = variational_cross_check(r1.state, cfg.nu, cfg.params, cfg.solver)
        summary["variational_minimizer_deviation"] = float(
            np.max(np.abs(w.values - d.v.values)) / max(d.v.sup_norm(), np.finfo(float).tiny))
    report = build_report(d, cfg.params, an.get("truncation_widths"), an.get("boundary_buffer"),
                          an.get("fit_derivatives", 2), variational)
    summary["direct_difference"] = r2.energy - r1.energy
    if variational is not None:
        summary["variational_agreement_ratio"] = variational / report.gamma if report.gamma else None
    written = []
    if _wants(cfg, "csv"):
        d.write_csv(out / "defect.csv", cfg.m1)
        report.write_truncation_csv(out / "truncation.csv")
        written += [("defect.csv", DEFECT_CSV_COLUMNS), ("truncation.csv", TRUNCATION_CSV_COLUMNS),
                    ("trace_reference.csv", TRACE_COLUMNS), ("trace_perturbed.csv", TRACE_COLUMNS)]
    if _wants(cfg, "json"):
        write_json(out / "report.json", report.to_dict())
        write_json(out / "summary.json", summary)
    for name, header in written:
        validate_csv(out / name, header)
    if _wants(cfg, "json"):
        validate_json(out / "report.json", REPORT_KEYS)
    log.info("gamma = %.12g (direct difference %.12g)", report.gamma, summary["direct_difference"])
    return 0


def cmd_decay_study(cfg: RunConfig, jobs: int = 1) -> int:
    _require_perturbation(cfg)
    r1, r2 = _defect_solves(cfg, jobs)
    if not (r1.converged and r2.converged):
        log.error("solve did not converge: %s / %s", r1.message, r2.message)
        return 1
    d = DefectFields.from_results(r1, r2, cfg.nu, cfg.params)
    an = cfg.analysis
    core, buffer = cfg.nu.defect_half_width, an.get("boundary_buffer")
    derivs = an.get("fit_derivatives", 2)
    payload = {}
    for name, f in (("v", d.v), ("phi_d", d.phi_d)):
        payload[name] = {side: fit_decay(f, core, buffer, derivs, side).to_dict()
                         for side in ("both", "left", "right")}
    payload["fit_derivatives"] = derivs
    out = _prepare_out(cfg)
    if _wants(cfg, "csv"):
        d.write_csv(out / "defect.csv", cfg.m1)
        validate_csv(out / "defect.csv", DEFECT_CSV_COLUMNS)
    if _wants(cfg, "json"):
        write_json(out / "decay.json", payload)
        validate_json(out / "decay.json", ("v", "phi_d"))
    return 0


def _restrict(values: np.ndarray, big: Grid1D, small: Grid1D) -> np.ndarray:
    offset = int(round((big.half_width - small.half_width) / big.spacing))
    return values[offset:offset + small.num_points]


def cmd_convergence_study(cfg: RunConfig, sizes, jobs: int = 1) -> int:
    _require_perturbation(cfg)
    sizes = [float(s) for s in sizes]
    if len(sizes) < 3:
        raise ConfigError("convergence study needs at least three sizes")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ConfigError("sizes must be strictly increasing")
    h = cfg.grid.spacing
    nuc = cfg.raw["nuclear"]
    tasks = []
    for L in sizes:
        n = 2 * L / h
        if abs(n - round(n)) > 1e-6 or round(n) % 2:
            raise ConfigError(f"L={L} is not compatible with spacing h={h:.12g}")
        grid = Grid1D(L, int(round(n)))
        try:
            m1 = _build_reference(nuc, grid, cfg.base_dir)
            nu = _build_perturbation(nuc["perturbation"], grid, cfg.base_dir, "nuclear.perturbation")
            if 2 * L <= nu.defect_width:
                raise ConfigError(f"L={L} does not exceed the defect width")
            m2 = superpose(m1, nu)
        except ValueError as exc:
            raise ConfigError(f"L={L}: {exc}") from exc
        tasks.append((grid, m1, nu, m2))
    solve_args = [a for (_, m1, _, m2) in tasks for a in ((m1, cfg.params, cfg.solver), (m2, cfg.params, cfg.solver))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_solve_args, solve_args))
    else:
        results = [_solve_args(a) for a in solve_args]
    failed = [r.message for r in results if not r.converged]
    if failed:
        log.error("convergence study: %d solves did not converge: %s", len(failed), failed[0])
        return 1
    gammas, fields = [], []
    for i, (grid, m1, nu, m2) in enumerate(tasks):
        r1, r2 = results[2 * i], results[2 * i + 1]
        gammas.append(relative_energy(DefectFields.from_results(r1, r2, nu, cfg.params), cfg.params))
        fields.append((grid, r2.state.u.values))
    big_grid, u_ref = fields[-1]
    diffs = [float(np.max(np.abs(u - _restrict(u_ref, big_grid, grid)))) for grid, u in fields]
    out = _prepare_out(cfg)
    write_table(out / "convergence.csv", CONVERGENCE_CSV_COLUMNS, [sizes, gammas, diffs])
    validate_csv(out / "convergence.csv", CONVERGENCE_CSV_COLUMNS)
    steps = np.abs(np.diff(gammas))
    usable = [(L, d) for L, d in zip(sizes[:-1], diffs[:-1]) if d > 0]
    fit = None
    if len(usable) >= 2:
        slope, intercept = np.polyfit([L for L, _ in usable], np.log([d for _, d in usable]), 1)
        fit = {"k3": float(math.exp(intercept)), "k4": float(-slope)}
    write_json(out / "convergence.json", {
        "sizes": sizes,
        "gamma": gammas,
        "gamma_successive_differences": steps.tolist(),
        "successive_difference_ratios": (steps[1:] / steps[:-1]).tolist() if len(steps) > 1 else [],
        "field_difference_fit": fit,
    })
    return 0


def cmd_uniqueness_probe(cfg: RunConfig, trials: int, jobs: int = 1) -> int:
    m = superpose(cfg.m1, cfg.nu) if cfg.nu is not None else cfg.m1
    try:
        spread, results = uniqueness_probe(m, cfg.params, cfg.solver, trials, workers=jobs, return_results=True)
    except ConvergenceError as exc:
        log.error("%s", exc)
        return 1
    scale = max(r.state.u.sup_norm() for r in results)
    asserted = cfg.params.c_d == 0
    passed = spread <= 1e-6 * scale
    out = _prepare_out(cfg)
    write_json(out / "uniqueness.json", {
        "model": cfg.params.name,
        "trials": trials,
        "seed": cfg.solver.seed,
        "spread": spread,
        "relative_spread": spread / scale,
        "uniqueness_asserted": asserted,
        "within_tolerance": passed,
        "energies": [r.energy for r in results],
        "mu_final": [r.mu_final for r in results],
    })
    validate_json(out / "uniqueness.json", ("spread", "relative_spread"))
    return 0 if (passed or not asserted) else 1


# --- entry point ----------------------------------------------------------


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--preset", choices=sorted(PRESETS), help="built-in configuration (merged under --config)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output.directory)")
    common.add_argument("--model", choices=("tfw", "tfwd"), help="override model.preset")
    common.add_argument("--seed", type=int, help="override solver.seed")
    common.add_argument("--jobs", type=_positive_int, default=1, help="worker processes for independent solves")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tfwlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="ground state of one nuclear density")
    for name, text in (("relative-energy", "relative energy of a defect with diagnostics"),
                       ("decay-study", "exponential decay fits of the defect response")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--perturbed", metavar="PATH",
                       help="config whose nuclear section is the perturbation; grid and model must match")
        if name == "relative-energy":
            p.add_argument("--variational", action="store_true", help="also minimise the defect energy directly")
    p = sub.add_parser("convergence-study", parents=[common], help="relative energy against cell size")
    p.add_argument("--sizes", type=float, nargs="+", required=True, metavar="L")
    p = sub.add_parser("uniqueness-probe", parents=[common], help="solve from random starts and compare")
    p.add_argument("--trials", type=int, default=3)
    return parser


def _apply_perturbed(raw: dict, path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read perturbation config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("perturbation config must be a JSON object")
    _check_keys(doc, SECTIONS, "perturbation config")
    for section in ("grid", "model"):
        if section in doc and doc[section] != raw.get(section):
            raise ConfigError(f"perturbation config {section} does not match the reference")
    raw = copy.deepcopy(raw)
    raw.setdefault("nuclear", {})["perturbation"] = _require(doc, "nuclear", "perturbation config")
    return raw


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        raw, base_dir = load_raw_config(args)
        if getattr(args, "perturbed", None):
            raw = _apply_perturbed(raw, args.perturbed)
        cfg = build_config(raw, base_dir, args.out)
        if args.command == "solve":
            status = cmd_solve(cfg)
        elif args.command == "relative-energy":
            status = cmd_relative_energy(cfg, args.jobs)
        elif args.command == "decay-study":
            status = cmd_decay_study(cfg, args.jobs)
        elif args.command == "convergence-study":
            status = cmd_convergence_study(cfg, args.sizes, args.jobs)
        else:
            if args.trials < 2:
                raise ConfigError("--trials must be at least 2")
            status = cmd_uniqueness_probe(cfg, args.trials, args.jobs)
    except ConfigError as exc:
        print(f"tfwlab: invalid input: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"tfwlab: {exc}", file=sys.stderr)
        return 1
    if cfg.output_dir.exists():
        write_metadata(cfg.output_dir, args.command, started)
    return status


if __name__ == "__main__":
    sys.exit(main())
