"""Command-line entry point: solve, verify, refine, oracle.

Exit codes: 0 ok, 2 configuration or parameter validation, 3 solver failure,
4 hard checks failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load, parse_checks
from .diagnostics import ORACLE_STEPS, oracle_spots, run_checks
from .errors import ConvBondError, ProbabilityOutOfRange, SolverError, ValidationError
from .free_boundary import (
    non_degeneracy_check,
    quadratic_growth_check,
    write_free_boundary_csv,
)
from .lcp import residual_report, write_surface_csv
from .oracle import tree_price_at
from .transforms import to_transformed

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECKS = 0, 2, 3, 4
PROBE_FRACTION = 0.8

logger = logging.getLogger("convbond")


def _write_json(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return path


def _manifest(cfg: RunConfig, command: str, files: list[str], grids: dict, extra: dict | None = None) -> dict:
    out = {
        "command": command,
        "version": __version__,
        "config": cfg.as_dict(),
        "grids": grids,
        "files": sorted(files),
    }
    if extra:
        out.update(extra)
    return out


def _finish(out: Path, cfg: RunConfig, command: str, files: list[str], grids: dict, started: float, extra=None) -> None:
    _write_json(out / "manifest.json", _manifest(cfg, command, files + ["manifest.json"], grids, extra))
    # wall time lives apart from the manifest so repeated runs give identical files
    _write_json(out / "timing.json", {"command": command, "wall_seconds": time.perf_counter() - started})


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    started = time.perf_counter()
    study = cfg.study()
    surface = study.surface()
    residuals = residual_report(surface)
    worst = max(residuals, key=lambda r: r.max_abs)
    write_surface_csv(surface, out / "surface.csv")
    summary = {
        "max_residual": worst.max_abs,
        "worst_node": list(worst.location),
        "total_sweeps": int(np.sum(surface.iterations)),
        "max_sweeps": int(np.max(surface.iterations)) if surface.iterations.size else 0,
    }
    _finish(out, cfg, "solve", ["surface.csv"], {"0": surface.grid.metadata()}, started, {"residuals": summary})
    print(f"solved {surface.grid.nx}x{surface.grid.nt}; max complementarity residual {worst.max_abs:.3e} at {worst.location}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    started = time.perf_counter()
    study = cfg.study()
    report = run_checks(study, cfg.checks)
    files = ["diagnostics.json"]
    _write_json(out / "diagnostics.json", report.to_dict())
    try:
        write_free_boundary_csv(study.curve(), out / "free_boundary.csv")
        files.append("free_boundary.csv")
    except ConvBondError as exc:
        logger.info("no free boundary exported: %s", exc)
    _finish(out, cfg, "verify", files, report.grids, started)
    for c in report.checks:
        tag = "PASS" if c.passed else "FAIL"
        if not c.hard:
            tag = "INFO"
        note = f" [{c.error}] {c.message}" if c.error else ""
        print(f"{tag} {c.name}{note}")
    if report.failed:
        print("failed checks: " + ", ".join(report.failed), file=sys.stderr)
        return EXIT_CHECKS
    return EXIT_OK


def _order(a: float, b: float) -> float:
    if a <= 0.0 or b <= 0.0:
        return math.nan
    return math.log2(a / b)


def cmd_refine(cfg: RunConfig, out: Path, levels: int) -> int:
    if not 2 <= levels <= 4:
        raise ValidationError(f"levels must lie in [2, 4], got {levels}")
    started = time.perf_counter()
    study = cfg.study()
    p = cfg.params
    # a base-grid node is a node on every nested level, so no interpolation error enters
    base_x = study.surface(0).grid.x
    probe = float(base_x[np.argmin(np.abs(base_x - PROBE_FRACTION * p.x_max))])
    rows = []
    for k in range(levels):
        try:
            s = study.surface(k)
        except SolverError as exc:
            raise type(exc)(f"level {k}: {exc}", level=k, **exc.details) from exc
        row = {"level": k, "nx": s.grid.nx, "nt": s.grid.nt, "probe_value": s.at(probe, 0.0)}
        if k > 0:
            coarse = study.surface(k - 1).values
            row["surface_diff"] = float(np.abs(s.values[::2, ::2] - coarse).max())
        try:
            curve = study.curve(k)
            ts = to_transformed(s)
            row["t_star"] = curve.t_star
            row["C0"] = quadratic_growth_check(ts, curve=curve).C0
            row["c0"] = non_degeneracy_check(ts, curve=curve).c0
        except ConvBondError as exc:
            row["free_boundary"] = exc.code
        rows.append(row)

    orders = {}
    for k in range(2, levels):
        d1 = abs(rows[k - 1]["probe_value"] - rows[k - 2]["probe_value"])
        d2 = abs(rows[k]["probe_value"] - rows[k - 1]["probe_value"])
        orders[f"probe_{k}"] = _order(d1, d2)
        orders[f"surface_{k}"] = _order(rows[k - 1]["surface_diff"], rows[k]["surface_diff"])
    if "t_star" in rows[-1] and "t_star" in rows[-2]:
        orders["t_star_drift"] = abs(rows[-1]["t_star"] - rows[-2]["t_star"])
        orders["dt_fine"] = study.surface(levels - 1).grid.dt

    payload = {"probe": [probe, 0.0], "levels": rows, "orders": orders}
    _write_json(out / "refinement.json", payload)
    grids = {str(k): study.surface(k).grid.metadata() for k in range(levels)}
    _finish(out, cfg, "refine", ["refinement.json"], grids, started)
    for row in rows:
        print(" ".join(f"{k}={v}" for k, v in row.items()))
    for k, v in orders.items():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_oracle(cfg: RunConfig, out: Path, steps: int) -> int:
    started = time.perf_counter()
    p = cfg.params
    spots = [float(x) for x in oracle_spots(p)] + [PROBE_FRACTION * p.x_max]
    values = [[x, tree_price_at(p, x, steps)] for x in sorted(set(spots))]
    _write_json(out / "oracle.json", {"params": p.as_dict(), "steps": steps, "t": 0.0, "values": values})
    _finish(out, cfg, "oracle", ["oracle.json"], {}, started)
    for x, v in values:
        print(f"x={x!r} value={v!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convbond", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "verify", "refine", "oracle"):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", type=Path, help="TOML run configuration")
        cmd.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        if name == "verify":
            cmd.add_argument("--checks", help="comma-separated check names")
        if name == "refine":
            cmd.add_argument("--levels", type=int, default=3)
        if name == "oracle":
            cmd.add_argument("--steps", type=int, default=ORACLE_STEPS)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args.config) if args.config else RunConfig()
        if getattr(args, "checks", None):
            cfg.checks = parse_checks(args.checks)
        out = Path(args.out) if args.out else Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "verify":
            return cmd_verify(cfg, out)
        if args.command == "refine":
            return cmd_refine(cfg, out, args.levels)
        return cmd_oracle(cfg, out, args.steps)
    except (ValidationError, ProbabilityOutOfRange) as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error [InvalidArgument]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ConvBondError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_CHECKS


if __name__ == "__main__":
    sys.exit(main())
