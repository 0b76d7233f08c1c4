"""Command line: run episodes, grid searches and benchmarks; render the track."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, Scenario, load_scenario
from .mppi import MPPI, RA_MPPI, default_threads
from .simulator import TRAJECTORY_COLUMNS, grid_search, run_episode, throughput_benchmark
from .svg import render_svg

log = logging.getLogger("riskpath")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_IO = 4

METRICS_COLUMNS = ("controller", "seed", "laps", "collisions", "boundary_collisions",
                   "obstacle_collisions", "collisions_per_lap", "mean_lap_time", "iterations",
                   "trajectories_evaluated", "aborted")
BENCH_COLUMNS = ("threads", "total_trajectories", "M", "N", "iterations_per_s",
                 "trajectories_per_s", "reference_gpu_hz")
NA = "NA"


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return NA if math.isnan(v) else repr(v)
    return str(v)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def _write_json(path: Path, data):
    path.write_text(json.dumps(_json_safe(data), indent=2) + "\n")


def _error(kind: str, message: str, key: str | None = None):
    record = {"error": kind, "message": message}
    if key is not None:
        record["key"] = key
    print(json.dumps(record), file=sys.stderr)


def _parse_list(text: str, cast=float):
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad list {text!r}") from None


def _thread_list(text: str):
    out = []
    for v in text.split(","):
        v = v.strip()
        if v == "max":
            out.append(os.cpu_count() or 1)
        elif v:
            out.append(int(v))
    return sorted(set(out))


def build_scenario(args) -> Scenario:
    sc = load_scenario(args.scenario) if args.scenario else Scenario()
    sc = sc.with_overrides(args.set or [])
    if args.seed is not None:
        sc = dataclasses.replace(sc, run=dataclasses.replace(sc.run, seed=args.seed))
    sc.validate()
    return sc


def _threads(args) -> int:
    return args.threads or default_threads()


def trajectory_rows(metrics):
    tr = metrics.trajectory
    for row in tr:
        yield [*row[:-1].tolist(), int(row[-1])]


def write_episode(out: Path, sc: Scenario, metrics, overrides, render: bool, figures: bool):
    out.mkdir(parents=True, exist_ok=True)
    summary = metrics.summary()
    _write_json(out / "metrics.json", {
        "scenario": sc.to_dict(),
        "overrides": list(overrides),
        "metrics": summary,
        "lap_times": metrics.lap_times,
        "collision_events": [{"t": t, "x": x, "y": y, "kind": k}
                             for t, x, y, k in metrics.collision_events],
        "abort_reason": metrics.abort_reason,
        "wall_time": metrics.wall_time,
    })
    _write_csv(out / "metrics.csv", METRICS_COLUMNS, [[summary[c] for c in METRICS_COLUMNS]])
    _write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, trajectory_rows(metrics))
    if render:
        track = sc.track.build()
        hits = [(x, y) for _, x, y, _ in metrics.collision_events]
        (out / "track.svg").write_text(
            render_svg(track, [(metrics.controller, metrics.trajectory[:, 1:3], hits)]))
    if figures:
        from . import plots
        plots.speed_trace([metrics], out / "speed.png")


def cmd_run(args) -> int:
    sc = build_scenario(args)
    metrics = run_episode(sc, threads=_threads(args))
    write_episode(Path(args.out), sc, metrics, args.set or [], args.render, args.figures)
    log.info("%s seed %d: %d laps, %d collisions, mean lap %.2f s", metrics.controller,
             metrics.seed, metrics.laps, metrics.collisions, metrics.mean_lap_time)
    if metrics.aborted:
        _error("episode_abort", metrics.abort_reason)
        return EXIT_ABORT
    return EXIT_OK


def cmd_compare(args) -> int:
    """Both controllers on the same scenario and seed; overlay render and bar chart."""
    sc = build_scenario(args)
    out = Path(args.out)
    runs = {}
    status = EXIT_OK
    for kind in (MPPI, RA_MPPI):
        run_sc = dataclasses.replace(sc, controller=dataclasses.replace(sc.controller, kind=kind))
        m = run_episode(run_sc, threads=_threads(args))
        write_episode(out / kind, run_sc, m, args.set or [], False, False)
        runs[kind] = m
        if m.aborted:
            _error("episode_abort", f"{kind}: {m.abort_reason}")
            status = EXIT_ABORT
    track = sc.track.build()
    logs = [(k, m.trajectory[:, 1:3], [(x, y) for _, x, y, _ in m.collision_events])
            for k, m in runs.items()]
    (out / "track.svg").write_text(render_svg(track, logs))
    _write_csv(out / "compare.csv", METRICS_COLUMNS,
               [[m.summary()[c] for c in METRICS_COLUMNS] for m in runs.values()])
    if args.figures:
        from . import plots
        plots.collisions_bar({sc.plant.kind: {k: m.collisions_per_lap for k, m in runs.items()}},
                             out / "collisions_per_lap.png")
        plots.speed_trace(list(runs.values()), out / "speed.png")
    return status


def write_grid(out: Path, result, overrides, sc: Scenario):
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for a in result.alphas:
        row = [a]
        for cu in result.c_us:
            r = result.ratios.get((a, cu))
            row.append(NA if r is None or not math.isfinite(r) else r)
        rows.append(row)
    _write_csv(out / "grid.csv", ["alpha\\C_u", *[_cell(float(c)) for c in result.c_us]], rows)
    cells = [{"alpha": a, "C_u": cu, "ra_collisions": result.collisions.get((a, cu)),
              "ratio": result.ratios.get((a, cu)),
              "mean_lap_time": result.lap_times.get((a, cu)),
              "error": result.errors.get((a, cu))}
             for a in result.alphas for cu in result.c_us]
    _write_json(out / "grid.json", {
        "scenario": sc.to_dict(),
        "overrides": list(overrides),
        "alphas": result.alphas,
        "c_us": result.c_us,
        "seeds": result.seeds,
        "mppi_collisions": result.baseline,
        "mppi_mean_lap_time": result.baseline_lap_time,
        "cells": cells,
        "alpha_trend": result.alpha_trend(),
    })


def cmd_grid(args) -> int:
    sc = build_scenario(args)
    result = grid_search(sc, args.c_u, args.alpha, seeds=args.seeds, workers=args.workers,
                         threads=args.threads or 1)
    out = Path(args.out)
    write_grid(out, result, args.set or [], sc)
    if args.figures:
        from . import plots
        plots.grid_heatmap(result, out / "grid.png")
    ok = [r for r in result.ratios.values() if r is not None]
    if not ok:
        _error("grid", "no grid cell produced a ratio")
        return EXIT_ABORT
    return EXIT_OK


def cmd_bench(args) -> int:
    sc = build_scenario(args)
    rows = throughput_benchmark(sc, totals=args.totals, threads=args.thread_counts, M=args.M,
                                iterations=args.iterations)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "bench.csv", BENCH_COLUMNS, [[r[c] for c in BENCH_COLUMNS] for r in rows])
    return EXIT_OK


def read_trajectory(path) -> tuple[np.ndarray, list]:
    """Positions and collision-event positions from a trajectory.csv."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [(float(r["x"]), float(r["y"]), int(r["collision"])) for r in reader]
    xy = np.array([(x, y) for x, y, _ in rows]).reshape(-1, 2)
    hits, prev = [], 0
    for x, y, c in rows:
        if c and not prev:
            hits.append((x, y))
        prev = c
    return xy, hits


def cmd_render(args) -> int:
    sc = build_scenario(args)
    logs = []
    for item in args.log or []:
        label, sep, path = item.partition("=")
        if not sep:
            label, path = Path(item).parent.name or "trajectory", item
        xy, hits = read_trajectory(path)
        logs.append((label, xy, hits))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "track.svg").write_text(render_svg(sc.track.build(), logs))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario YAML file (built-in defaults when omitted)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a scenario field, e.g. risk.alpha=0.9 (repeatable)")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--threads", type=int,
                        help="rollout threads (default: RISKPATH_THREADS or all cores)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="riskpath", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run one closed-loop episode")
    run.add_argument("--render", action="store_true", help="also write track.svg")
    run.add_argument("--figures", action="store_true", help="also write PNG figures")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", parents=[common],
                          help="run MPPI and RA-MPPI on the same seed and overlay them")
    cmp_.add_argument("--figures", action="store_true", help="also write PNG figures")
    cmp_.set_defaults(func=cmd_compare)

    grid = sub.add_parser("grid", parents=[common], help="(C_u, alpha) grid search")
    grid.add_argument("--c-u", type=_parse_list, default=[0.5, 0.6, 0.7], dest="c_u")
    grid.add_argument("--alpha", type=_parse_list, default=[0.5, 0.7, 0.9])
    grid.add_argument("--seeds", type=int, default=3)
    grid.add_argument("--workers", type=int, default=1, help="episode processes")
    grid.add_argument("--figures", action="store_true", help="also write grid.png")
    grid.set_defaults(func=cmd_grid)

    bench = sub.add_parser("bench", parents=[common], help="controller throughput")
    bench.add_argument("--thread-counts", type=_thread_list, default=[1],
                       help="comma list of thread counts; 'max' means all cores")
    bench.add_argument("--totals", type=lambda s: _parse_list(s, int),
                       default=[102_400, 307_200, 512_000])
    bench.add_argument("-M", type=int, default=1024)
    bench.add_argument("--iterations", type=int, default=3)
    bench.set_defaults(func=cmd_bench)

    render = sub.add_parser("render", parents=[common], help="SVG of the track and logs")
    render.add_argument("--log", action="append", metavar="LABEL=PATH",
                        help="trajectory.csv to overlay (repeatable)")
    render.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        _error("config", exc.message, exc.key)
        return EXIT_CONFIG
    except OSError as exc:
        _error("io", str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
