"""``trajex`` command line: simulate, extract, evaluate, batch.

Exit codes: 0 ok, 2 configuration error, 3 I/O or input-format error,
4 empty input, 5 a reference vehicle without an associated track.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

from .evaluation import (
    DEFAULT_INTERVAL,
    MODES,
    ReferenceRun,
    aggregate_bias_std,
    associate,
    comparison_table,
    error_curve,
    errors_run_csv,
    make_grid,
    summary_stats,
    visible_grid,
)
from .exceptions import ConfigError, MalformedRecord, MissingMode, TrajexError
from .geometry import Calibration
from .ingest import parse_camera_log, parse_radar_log, write_log
from .pipeline import TrajectoryExtractor
from .postprocess import dumps_trajectories, read_trajectories
from .simulator import ScenarioConfig, dumps_ground_truth, reference_runs, simulate
from .tracker import TrackerConfig, config_digest

log = logging.getLogger("trajex")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_EMPTY, EXIT_ASSOCIATION = 0, 2, 3, 4, 5


class CommandError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _threads():
    try:
        return max(1, int(os.environ.get("TRAJEX_THREADS", "1")))
    except ValueError:
        raise CommandError(EXIT_CONFIG, "TRAJEX_THREADS: must be an integer")


def _interval(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO:HI, e.g. 35:135")
    if not hi > lo:
        raise argparse.ArgumentTypeError("interval upper bound must exceed lower bound")
    return lo, hi


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _dump_json(path, doc):
    _write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _manifest(out, command, args, configs, inputs, outputs, started, seed=None):
    doc = {
        "tool": "trajex",
        "version": _version(),
        "command": command,
        "argv": [str(a) for a in args],
        "seed": seed,
        "configs": configs,
        "digests": {k: config_digest(v) for k, v in configs.items()},
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "runtime_s": round(time.perf_counter() - started, 3),
    }
    _dump_json(Path(out) / "manifest.json", doc)
    return doc


def _scenario_config(args):
    cfg = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if getattr(args, "duration", None) is not None:
        kw["duration"] = args.duration
    return cfg.with_(**kw) if kw else cfg


def _tracker_config(path):
    return TrackerConfig.load(path) if path else TrackerConfig()


# --------------------------------------------------------------------------
# simulate


def write_scenario(cfg: ScenarioConfig, out):
    """Simulate ``cfg`` and write ground truth, logs and calibration to ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sc = simulate(cfg)
    _write(out / "gt.csv", dumps_ground_truth(sc.ground_truth))
    write_log(out / "cam.jsonl", sc.camera)
    write_log(out / "radar.jsonl", sc.radar)
    _dump_json(out / "calibration.json", cfg.calibration_dict())
    _dump_json(out / "scenario.json", cfg.to_dict())
    return sc, [out / n for n in ("gt.csv", "cam.jsonl", "radar.jsonl",
                                  "calibration.json", "scenario.json")]


def cmd_simulate(args):
    started = time.perf_counter()
    cfg = _scenario_config(args)
    sc, outputs = write_scenario(cfg, args.out)
    log.info("simulated %d vehicles, %d camera and %d radar detections",
             len(sc.ground_truth), len(sc.camera), len(sc.radar))
    _manifest(args.out, "simulate", sys.argv[1:], {"scenario": cfg.to_dict()},
              [args.config] if args.config else [], outputs, started, cfg.seed)
    return EXIT_OK


# --------------------------------------------------------------------------
# extract


def extract_files(camera, radar, calibration, tracker_cfg, mode, out, frame="Setup"):
    """Run the extractor on log files and write its outputs to ``out``."""
    out = Path(out)
    cam = parse_camera_log(camera) if camera and mode != "radar" else []
    rad = parse_radar_log(radar) if radar and mode != "camera" else []
    cal = Calibration.load(calibration) if calibration else None
    ex = TrajectoryExtractor(tracker_cfg, mode, cal, output_frame=frame)
    ex.fit(cam, rad)
    _write(out / "trajectories.csv",
           dumps_trajectories(ex.trajectories_, frame, ex.config_digest_))
    lines = ["track_id,n_detections,duration_s"]
    lines += [f"{t.id},{t.n_detections},{t.duration:.6f}" for t in ex.discarded_]
    _write(out / "discarded.csv", "\n".join(lines) + "\n")
    times = [d.timestamp for d in cam] + [d.timestamp for d in rad]
    span = max(times) - min(times) if times else 0.0
    _write(out / "summary.txt", summary_stats(ex.tracks_, span).to_text())
    outputs = [out / n for n in ("trajectories.csv", "discarded.csv", "summary.txt")]
    return ex, len(times), outputs


def cmd_extract(args):
    started = time.perf_counter()
    if args.mode != "radar" and not args.calibration and args.camera:
        raise CommandError(EXIT_CONFIG, "--calibration: required when camera detections are used")
    tcfg = _tracker_config(args.config)
    ex, n, outputs = extract_files(args.camera, args.radar, args.calibration, tcfg,
                                   args.mode, args.out, args.frame)
    inputs = [p for p in (args.camera, args.radar, args.calibration, args.config) if p]
    _manifest(args.out, "extract", sys.argv[1:],
              {"tracker": tcfg.to_dict(), "extract": {"mode": args.mode, "frame": args.frame}},
              inputs, outputs, started)
    log.info("%d trajectories, %d discarded tracks", len(ex.trajectories_), len(ex.discarded_))
    if n == 0:
        log.warning("no detections in the input logs; wrote an empty trajectory file")
        return EXIT_EMPTY
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluate


def evaluate_files(gt_paths, mode_paths, out, grid_step=1.0, interval=DEFAULT_INTERVAL,
                   distance="radial"):
    """Evaluate trajectory files against ground truth.

    ``mode_paths`` maps a sensor mode to a list of trajectory CSVs paired
    position-wise with ``gt_paths``. Every ground-truth vehicle is one
    reference run. Returns ``(comparison, tables, outputs)``.
    """
    out = Path(out)
    refs = [read_trajectories(p)[0] for p in gt_paths]
    grid = make_grid(interval, grid_step)
    tables, outputs = {}, []
    flagged = []
    for mode in MODES:
        paths = mode_paths.get(mode)
        if not paths:
            continue
        absent = [str(p) for p in paths if not Path(p).exists()]
        if absent:
            log.warning("%s: missing trajectory files %s; mode skipped", mode, absent)
            continue
        if len(paths) != len(gt_paths):
            raise CommandError(EXIT_CONFIG,
                               f"--{mode}: expected {len(gt_paths)} files, got {len(paths)}")
        curves = []
        run = 0
        for ref_group, path in zip(refs, paths):
            trajs = read_trajectories(path)[0]
            matched = associate(ref_group, trajs)
            for ref in ref_group:
                run += 1
                meas = matched[ref.track_id]
                if meas is None:
                    raise CommandError(EXIT_ASSOCIATION,
                                       f"{mode}: vehicle {ref.track_id} in {path} has no track")
                rr = ReferenceRun(run, ref, meas, mode)
                full = error_curve(rr, visible_grid(rr, grid_step, distance), distance,
                                   strict=False)
                p = out / mode / f"errors_run{run}.csv"
                _write(p, errors_run_csv(full))
                outputs.append(p)
                curve = error_curve(rr, grid, distance)
                if curve.multiple_crossings:
                    flagged.append((mode, run))
                curves.append(curve)
        tables[mode] = aggregate_bias_std(curves, interval)
        p = out / mode / "bias_std.csv"
        _write(p, tables[mode].to_csv())
        outputs.append(p)
    if not tables:
        raise CommandError(EXIT_EMPTY, "no trajectory files given")
    try:
        comp = comparison_table(tables)
    except MissingMode as exc:
        log.warning("%s; comparing the present modes only", exc)
        comp = comparison_table(tables, require_all=False)
    _write(out / "comparison.csv", comp.to_csv())
    text = comp.to_text()
    if flagged:
        text += "\nRuns with multiple crossings (first crossing used):\n"
        text += "".join(f"  {m} run {r}\n" for m, r in flagged)
    _write(out / "comparison.txt", text)
    outputs += [out / "comparison.csv", out / "comparison.txt"]
    return comp, tables, outputs


def cmd_evaluate(args):
    started = time.perf_counter()
    mode_paths = {m: getattr(args, m) for m in MODES if getattr(args, m)}
    comp, _, outputs = evaluate_files(args.gt, mode_paths, args.out, args.grid_step,
                                      args.interval, args.distance)
    inputs = list(args.gt) + [p for ps in mode_paths.values() for p in ps]
    _manifest(args.out, "evaluate", sys.argv[1:],
              {"evaluate": {"grid_step": args.grid_step, "interval": list(args.interval),
                            "distance": args.distance}},
              inputs, outputs, started)
    print(comp.to_text(), end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# batch


def _batch_run(job):
    cfg, tcfg, run_dir = job
    write_scenario(cfg, run_dir)
    for mode in MODES:
        extract_files(run_dir / "cam.jsonl", run_dir / "radar.jsonl",
                      run_dir / "calibration.json", tcfg, mode, run_dir / mode)
    return run_dir


def cmd_batch(args):
    """Simulate reference runs, extract in every mode and evaluate."""
    started = time.perf_counter()
    tcfg = _tracker_config(args.config)
    overrides = json.loads(args.scenario_overrides) if args.scenario_overrides else {}
    try:
        cfgs = reference_runs(args.runs, args.seed, **overrides)
    except TypeError as exc:
        raise CommandError(EXIT_CONFIG, f"--scenario-overrides: {exc}")
    out = Path(args.out)
    jobs = [(c, tcfg, out / f"run{i + 1:02d}") for i, c in enumerate(cfgs)]
    threads = _threads()
    if threads > 1:
        with ProcessPoolExecutor(threads) as pool:
            dirs = list(pool.map(_batch_run, jobs))
    else:
        dirs = [_batch_run(j) for j in jobs]
    comp, _, outputs = evaluate_files(
        [d / "gt.csv" for d in dirs],
        {m: [d / m / "trajectories.csv" for d in dirs] for m in MODES},
        out / "evaluation", args.grid_step, args.interval)
    _manifest(out, "batch", sys.argv[1:],
              {"tracker": tcfg.to_dict(),
               "scenarios": [c.to_dict() for c in cfgs]},
              [args.config] if args.config else [], outputs, started, args.seed)
    print(comp.to_text(), end="")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="trajex", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"trajex {_version()}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate ground truth and sensor logs")
    s.add_argument("--config", help="scenario JSON")
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("extract", help="track and smooth detections")
    e.add_argument("--camera", help="camera log (JSON lines)")
    e.add_argument("--radar", help="radar log (JSON lines)")
    e.add_argument("--calibration", help="homography / frame transform JSON")
    e.add_argument("--config", help="tracker JSON")
    e.add_argument("--mode", choices=MODES, default="fused")
    e.add_argument("--frame", default="Setup", help="output frame (default Setup)")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_extract)

    v = sub.add_parser("evaluate", help="compare trajectories with ground truth")
    v.add_argument("--gt", nargs="+", required=True)
    for m in MODES:
        v.add_argument(f"--{m}", nargs="+", metavar="CSV",
                       help=f"{m} trajectories, one per --gt file")
    v.add_argument("--grid-step", type=float, default=1.0)
    v.add_argument("--interval", type=_interval, default=DEFAULT_INTERVAL)
    v.add_argument("--distance", choices=("radial", "along-lane"), default="radial")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("batch", help="reference runs end to end in all sensor modes")
    b.add_argument("--runs", type=int, default=10)
    b.add_argument("--seed", type=int, default=2020)
    b.add_argument("--config", help="tracker JSON")
    b.add_argument("--scenario-overrides", help="JSON object of scenario fields")
    b.add_argument("--grid-step", type=float, default=1.0)
    b.add_argument("--interval", type=_interval, default=DEFAULT_INTERVAL)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_batch)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        log.error("%s", exc)
        return exc.code
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (OSError, MalformedRecord) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except TrajexError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
