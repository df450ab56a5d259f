"""Command line driver.

    markovproj {simulate,project,pide,mimic,audit} --config PATH [--out DIR] [--seed U64] [--threads N]

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 tolerance exceeded.
Reports are byte-deterministic; run metadata (including wall time) goes to a
separate ``manifest.json``.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fmt
from . import pipeline
from .config import derive_seed, load_config, validate_config
from .errors import ConfigError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_TOLERANCE = 0, 2, 3, 4
COMMANDS = ("simulate", "project", "pide", "mimic", "audit")


def _versions() -> dict:
    out = dict(markovproj=__version__, python=platform.python_version())
    for pkg in ("numpy", "scipy", "jsonschema"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _cmd_simulate(cfg, out: Path, threads) -> tuple[int, list]:
    bundle = pipeline.bundle_of(cfg)
    ens = pipeline.run_source(cfg, bundle, threads=threads, record=bool(cfg["output"]["dump_ensemble"]))
    times = pipeline.checkpoints(cfg, ens.grid)
    fmt.save_moments_csv(times, pipeline.summary_moments(bundle, ens, times), out / "summary.csv")
    files = ["summary.csv"]
    if cfg["output"]["dump_ensemble"]:
        fmt.save_ensemble(ens, out / "ensemble.bin")
        files.append("ensemble.bin")
    return EXIT_OK, files


def _save_coefficients(coeffs, out: Path) -> list:
    kernel = out / "kernel.csv" if coeffs.has_jumps else None
    fmt.save_coefficients_csv(coeffs, out / "coefficients.csv", kernel)
    fmt.save_coefficients_json(coeffs, out / "coefficients.json")
    return ["coefficients.csv", "coefficients.json"] + (["kernel.csv"] if kernel else [])


def _project(cfg, threads):
    bundle = pipeline.bundle_of(cfg)
    closed = cfg["projection"]["route"] == "closed-form"
    ens = None if closed else pipeline.run_source(cfg, bundle, threads=threads)
    return bundle, pipeline.project(cfg, bundle, ens)


def _cmd_project(cfg, out: Path, threads):
    _, coeffs = _project(cfg, threads)
    return EXIT_OK, _save_coefficients(coeffs, out)


def _pide_diagnostics(field_) -> dict:
    d = field_.diagnostics
    return dict(format="pide-diagnostics", version=1, scheme=d["scheme"], lost_mass=d["lost_mass"],
                min_density=float(min(d["min_density"], default=0.0)), max_cfl=d["max_cfl"], min_a=d["min_a"],
                initial_time=d.get("initial_time"), initial_sd=d.get("initial_sd"),
                mass_trace=[float(v) for v in d["mass"]], min_density_trace=[float(v) for v in d["min_density"]],
                lost_mass_trace=[float(v) for v in d["lost_mass_trace"]])


def _cmd_pide(cfg, out: Path, threads):
    bundle, coeffs = _project(cfg, threads)
    times = pipeline.checkpoints(cfg, pipeline.time_grid(cfg))
    field_ = pipeline.pide_route(cfg, bundle, coeffs, times)
    fmt.save_density_csv(field_, out / "density.csv")
    _write_json(out / "pide_diagnostics.json", _pide_diagnostics(field_))
    return EXIT_OK, _save_coefficients(coeffs, out) + ["density.csv", "pide_diagnostics.json"]


def _cmd_mimic(cfg, out: Path, threads):
    res = pipeline.run_mimic(cfg, threads=threads)
    files = _save_coefficients(res.coefficients, out)
    _write_json(out / "report.json", res.to_dict())
    files.append("report.json")
    for route, rep in sorted(res.reports.items()):
        fmt.save_report_csv(rep, out / f"report_{route}.csv")
        files.append(f"report_{route}.csv")
    if res.density is not None:
        fmt.save_density_csv(res.density, out / "density.csv")
        _write_json(out / "pide_diagnostics.json", _pide_diagnostics(res.density))
        files += ["density.csv", "pide_diagnostics.json"]
    for msg in res.failures:
        print(f"tolerance exceeded: {msg}", file=sys.stderr)
    return (EXIT_OK if res.passed else EXIT_TOLERANCE), files


def _cmd_audit(cfg, out: Path, threads):
    report = pipeline.run_audit(cfg, threads=threads)
    doc = dict(format="assumption-audit", **report.to_dict())
    _write_json(out / "audit.json", doc)
    for c in report.checks:
        status = {True: "pass", False: "FAIL", None: "n/a"}[c.passed]
        print(f"{status:4s} {c.assumption}: {c.name}")
    return EXIT_OK, ["audit.json"]


_DISPATCH = dict(simulate=_cmd_simulate, project=_cmd_project, pide=_cmd_pide, mimic=_cmd_mimic, audit=_cmd_audit)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="markovproj", description="Markovian projection experiments")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, type=Path, help="JSON experiment config")
    ap.add_argument("--out", type=Path, default=Path("."), help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    ap.add_argument("--threads", type=int, default=None, help="worker threads for simulation")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    stage = "config"
    try:
        cfg, digest = load_config(args.config)
        if args.seed is not None:
            cfg = validate_config({**cfg, "seed": args.seed})
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        args.out.mkdir(parents=True, exist_ok=True)
        stage = args.command
        with np.errstate(all="ignore"):
            code, files = _DISPATCH[args.command](cfg, args.out, args.threads)
    except ConfigError as exc:
        print(f"config error ({stage}): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numeric failure ({stage}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    manifest = dict(command=args.command, config=str(args.config), config_sha256=digest, seed=int(cfg["seed"]),
                    stage_seeds={s: derive_seed(cfg["seed"], s) for s in ("source", "resimulate")},
                    threads=args.threads or cfg["threads"], versions=_versions(), outputs=files, exit_code=code,
                    wall_time_s=round(time.perf_counter() - start, 3))
    _write_json(args.out / "manifest.json", manifest)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
