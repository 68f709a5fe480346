"""Command-line entry point: ``nexusloop {map,loop,nonrecip,validate,entangle}``.

Exit codes: 0 ok, 1 validation failure, 2 configuration error, 3 numerical
failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import datetime
import os
import sys
from dataclasses import replace

from . import __version__
from .config import RunConfig, parse_config, serialize
from .errors import ConfigError, NumericalError
from .io import (
    MAP_HEADER, TRAJ_HEADER, ensure_dir, map_rows, trajectory_rows, trajectory_summary, write_csv, write_json,
)

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3, 4


def _load_config(args) -> RunConfig:
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config!r}: {exc.strerror}", "config") from exc
        cfg = parse_config(text)
    else:
        cfg = RunConfig()
    run, loop = {}, {}
    if args.out is not None:
        run["output_dir"] = args.out
    if args.seed is not None:
        run["seed"] = args.seed
    if args.start is not None:
        run["start"] = args.start
    if args.d_mode is not None:
        run["d_mode"] = args.d_mode
    if args.freq_convention is not None:
        run["freq_convention"] = args.freq_convention
    if args.direction is not None:
        loop["direction"] = args.direction
    if args.delta_fluct is not None:
        loop["delta_fluct"] = args.delta_fluct
    if run:
        cfg = cfg.with_overrides("run", **run)
    if loop:
        cfg = cfg.with_overrides("loop", **loop)
    return cfg


def _metadata(cfg):
    return {
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "freq_convention": cfg.run.freq_convention,
        "d_mode": cfg.run.d_mode,
        "seed": cfg.run.seed,
    }


def cmd_map(cfg: RunConfig) -> int:
    from .bistability import locate_nexus, loop_bounding_box, loop_winding, scan_region
    from .errors import MultipleTonguesError, NoCuspError

    p = cfg.params()
    spec = cfg.loop_spec(p)
    box_p, box_d = loop_bounding_box(spec)
    if cfg.run.map_p_range_uw is not None:
        box_p = tuple(x / 1e6 for x in cfg.run.map_p_range_uw)
    if cfg.run.map_delta_range_over_omega_m is not None:
        box_d = tuple(x * p.omega_m for x in cfg.run.map_delta_range_over_omega_m)
    out = ensure_dir(cfg.run.output_dir)
    rmap = scan_region(p, box_p, box_d, resolution=cfg.run.map_resolution)
    write_csv(os.path.join(out, "map.csv"), MAP_HEADER, map_rows(rmap))
    write_csv(os.path.join(out, "folds.csv"), ["power_w", "detuning_rad_s"], rmap.fold_points)
    nexus = {"p_star": None, "delta_star": None, "tolerance": None, "loop_contains_nexus": None}
    if box_p[1] > box_p[0] and box_d[1] > box_d[0]:
        try:
            nx = locate_nexus(p, (box_p, box_d))
        except (NoCuspError, MultipleTonguesError) as exc:
            nexus["error"] = str(exc)
        else:
            nexus.update(
                p_star=nx.p_star,
                delta_star=nx.delta_star,
                tolerance={"power_w": nx.p_tol, "detuning_rad_s": nx.delta_tol},
                loop_contains_nexus=loop_winding(spec, (nx.p_star, nx.delta_star)) != 0,
            )
    else:
        nexus["error"] = "degenerate search box"
    write_json(os.path.join(out, "nexus.json"), nexus)
    return EXIT_OK


def _trajectory(cfg, p, spec, direction, start, with_e_n):
    from .loop import Admissibility, entanglement_along, track_branch

    t = track_branch(p, replace(spec, direction=direction), start, admissibility=Admissibility(cfg.run.admissibility))
    if with_e_n:
        entanglement_along(p, t, cfg.run.d_mode)
    return t


def cmd_loop(cfg: RunConfig, force_e_n: bool = False) -> int:
    p = cfg.params()
    spec = cfg.loop_spec(p)
    out = ensure_dir(cfg.run.output_dir)
    t = _trajectory(cfg, p, spec, spec.direction, cfg.run.start, force_e_n or cfg.run.e_n)
    write_csv(os.path.join(out, "trajectory.csv"), TRAJ_HEADER, trajectory_rows(t))
    summary = trajectory_summary(t)
    summary["metadata"] = _metadata(cfg)
    write_json(os.path.join(out, "summary.json"), summary)
    return EXIT_OK


def cmd_nonrecip(cfg: RunConfig) -> int:
    from .bistability import locate_nexus, loop_bounding_box, loop_winding
    from .loop import Admissibility, nonreciprocity_report, perturbed_spec

    p = cfg.params()
    spec = cfg.loop_spec(p)
    out = ensure_dir(cfg.run.output_dir)
    adm = Admissibility(cfg.run.admissibility)
    mode = cfg.run.d_mode if cfg.run.e_n else None
    rep = nonreciprocity_report(p, spec, d_mode=mode, admissibility=adm)
    runs = {}
    for (direction, start), t in rep.trajectories.items():
        name = f"trajectory_{direction.value}_{start.value}.csv"
        write_csv(os.path.join(out, name), TRAJ_HEADER, trajectory_rows(t))
        runs[f"{direction.value}/{start.value}"] = dict(trajectory_summary(t), file=name)
    report = {
        "outcome_table": {k.value: v for k, v in rep.outcome_table.items()},
        "nonreciprocal": rep.nonreciprocal,
        "e_n_final": {f"{d.value}/{s.value}": v for (d, s), v in rep.e_n_final.items()},
        "runs": runs,
        "delta_fluct": spec.delta_fluct,
    }
    try:
        nx = locate_nexus(p, loop_bounding_box(spec))
        report["nexus"] = {"p_star": nx.p_star, "delta_star": nx.delta_star,
                           "loop_winding": loop_winding(spec, (nx.p_star, nx.delta_star))}
    except NumericalError as exc:
        report["nexus"] = {"error": str(exc)}
    if cfg.run.delta_sweep:
        sweep = []
        for dl in (-0.1, 0.0, 0.1):
            r = nonreciprocity_report(p, perturbed_spec(spec, dl), d_mode=None, admissibility=adm)
            sweep.append({"delta": dl, "outcome_table": {k.value: v for k, v in r.outcome_table.items()},
                          "nonreciprocal": r.nonreciprocal})
        report["delta_sweep"] = sweep
    write_json(os.path.join(out, "report.json"), report)
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    from .validate import run_validation

    out = ensure_dir(cfg.run.output_dir)
    checks, warnings = run_validation(cfg)
    ok = all(c.passed for c in checks)
    write_json(os.path.join(out, "validation.json"),
               {"pass": ok, "checks": [c.as_dict() for c in checks], "warnings": warnings})
    if not ok:
        first = next(c for c in checks if not c.passed)
        print(f"validation failed: {first.name} (metric={first.metric!r}, tolerance={first.tolerance!r})",
              file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON configuration file")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--direction", choices=["cw", "ccw"])
    common.add_argument("--start", choices=["upper", "lower"])
    common.add_argument("--delta-fluct", type=float, dest="delta_fluct")
    common.add_argument("--d-mode", choices=["paper", "exact"], dest="d_mode")
    common.add_argument("--freq-convention", choices=["angular", "times2pi"], dest="freq_convention")
    parser = argparse.ArgumentParser(prog="nexusloop", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("map", parents=[common], help="classify the drive plane and locate the nexus")
    sub.add_parser("loop", parents=[common], help="track one branch around the loop")
    sub.add_parser("entangle", parents=[common], help="like loop, with entanglement always evaluated")
    sub.add_parser("nonrecip", parents=[common], help="all four direction/start runs")
    sub.add_parser("validate", parents=[common], help="run every oracle cross-check")
    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "config":
            sys.stdout.write(serialize(cfg))
            return EXIT_OK
        handler = {
            "map": cmd_map,
            "loop": cmd_loop,
            "entangle": lambda c: cmd_loop(c, force_e_n=True),
            "nonrecip": cmd_nonrecip,
            "validate": cmd_validate,
        }[args.command]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        path = getattr(exc, "filename", None) or ""
        print(f"I/O error: {exc.strerror or exc} {path}".rstrip(), file=sys.stderr)
        return EXIT_IO
    except (NumericalError, ValueError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
