"""Command-line entry point: simulate, run, eval, ablate.

Exit codes: 0 ok, 1 usage, 2 data or config error, 3 tracking failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .backend import run_pipeline
from .config import RunConfig
from .dataset_io import (load_frame_bundle, open_sequence, read_trajectory, write_trajectory)
from .exceptions import ConfigError, DataError, FormatError, VSSlamError
from .frontend import FrontEnd
from .sensors import FileBackedSensor, NoisySensor

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRACKING = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _clip(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("--clip takes MIN,MAX")
    return vals[0], vals[1]


def _say(args, *parts):
    if not getattr(args, "quiet", False):
        print(*parts)


# ---- simulate --------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .simulator import build_scene, export_sequence, load_simulation_config

    cfg = load_simulation_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    scene = build_scene(cfg.scene, seed)
    out = export_sequence(scene, cfg.trajectory, cfg.intrinsics, args.out, cfg.dynamic_classes)
    print(f"frames {cfg.trajectory.frame_count}")
    print(f"wrote {out}")
    return EXIT_OK


# ---- run -------------------------------------------------------------------

def cmd_run(args) -> int:
    overrides = {}
    if args.no_masks:
        overrides["masking"] = "off"
    if args.no_depth_prior:
        overrides["depth_prior"] = "off"
    if args.budget is not None:
        overrides["budget"] = str(args.budget)
    if args.clip is not None:
        overrides["d_min"], overrides["d_max"] = (repr(x) for x in args.clip)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    cfg = RunConfig.load(args.config, overrides)

    if not Path(args.sequence).is_dir():
        raise DataError(f"sequence directory not found: {args.sequence}")
    sensor = FileBackedSensor(args.sequence)
    fe_kwargs = cfg.frontend_kwargs()
    if "dynamic_classes" not in overrides and (args.config is None or
                                               "dynamic_classes" not in _file_keys(args.config)):
        seq_classes = sensor.info.extra.get("dynamic_classes")
        if seq_classes:
            fe_kwargs["dynamic_classes"] = tuple(int(c) for c in seq_classes.split(","))
    stream = NoisySensor(sensor, cfg.noise_config(), cfg["seed"]) if cfg.has_noise() else sensor
    fe = FrontEnd(**fe_kwargs).fit(intrinsics=sensor.intrinsics)
    result = run_pipeline(stream, fe, cfg.tracker_config())
    tr = result.tracking
    write_trajectory(args.out, tr.trajectory(), header="estimated, world-from-camera")
    print(f"frames {len(tr.poses)}")
    print(f"tracked {int(tr.tracked.sum())}")
    print(f"keyframes {tr.n_keyframes}")
    print(f"frontend_ms {1000.0 * result.mean_frontend_latency:.3f}")
    if tr.aborted:
        print("tracking lost: sequence aborted", file=sys.stderr)
        return EXIT_TRACKING
    return EXIT_OK


def _file_keys(path) -> set:
    from .dataset_io import read_kv

    return set(read_kv(path))


# ---- eval ------------------------------------------------------------------

def cmd_eval_ate(args) -> int:
    est = read_trajectory(args.estimate)
    gt = read_trajectory(args.groundtruth)
    res = ev.ate_rmse(est, gt, args.mode, args.max_dt)
    print(f"rmse {res.rmse:.6f}")
    print(f"median {res.median:.6f}")
    print(f"max {res.max:.6f}")
    print(f"pairs {res.pairs}")
    if args.mode == "sim3":
        print(f"scale {res.alignment.scale:.6f}")
    if args.csv:
        ev.write_csv(args.csv, ev.ATE_HEADER,
                     [(args.name or Path(args.estimate).stem, args.mode, res.rmse, res.median,
                       res.max, res.pairs)])
    return EXIT_OK


def _depth_series(seq_dir):
    info = open_sequence(seq_dir)
    return [load_frame_bundle(info.root, i, info).depth for i in range(info.frame_count)]


def cmd_eval_depth(args) -> int:
    preds = _depth_series(args.prediction)
    gts = _depth_series(args.groundtruth)
    if len(preds) != len(gts):
        raise DataError(f"frame counts differ: {len(preds)} vs {len(gts)}")
    preds = ev.apply_scaling_strategy(preds, gts, args.strategy, args.dmax)
    rep = ev.consistency_report(preds, gts)
    rows = rep.rows()
    for name, mean, sigma, c in rows:
        print(f"{name} mean {mean:.6f} sigma {sigma:.6f} cv {c:.6f}")
    if args.csv:
        ev.write_csv(args.csv, ev.CONSISTENCY_HEADER, rows)
    return EXIT_OK


# ---- ablate ----------------------------------------------------------------

def _require_output(args):
    if args.quiet and not args.csv:
        raise UsageError("--quiet without --csv would discard all output")


def cmd_ablate_drift(args) -> int:
    _require_output(args)
    try:
        cfg = ev.DriftConfig(args.frames, args.trials, args.model, args.phi, args.sigma)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res = ev.drift_variance_mc(cfg, np.random.default_rng(args.seed))
    rows = [(int(n), float(s), res.slope) for n, s in zip(res.n, res.std)]
    _say(args, f"slope {res.slope:.4f}")
    if args.csv:
        ev.write_csv(args.csv, ev.DRIFT_HEADER, rows)
    return EXIT_OK


def _seeds(args) -> list[int]:
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    return list(range(args.seed, args.seed + args.seeds))


def cmd_ablate_consistency(args) -> int:
    from .experiments import consistency_pair

    _require_output(args)
    if not 0 <= args.low_cv < args.high_cv:
        raise ConfigError("need 0 <= --low-cv < --high-cv")
    rows = []
    for seed in _seeds(args):
        o = consistency_pair(seed, args.low_cv, args.high_cv, frame_count=args.frames)
        rows.append(("low", seed, o.rmse_low, o.cv_low, o.ate_low))
        rows.append(("high", seed, o.rmse_high, o.cv_high, o.ate_high))
        _say(args, f"seed {seed} rmse {o.rmse_low:.4f}/{o.rmse_high:.4f} "
                   f"cv {o.cv_low:.4f}/{o.cv_high:.4f} ate {o.ate_low:.4f}/{o.ate_high:.4f}")
    lo = np.median([r[4] for r in rows if r[0] == "low"])
    hi = np.median([r[4] for r in rows if r[0] == "high"])
    _say(args, f"median ate low {lo:.4f} high {hi:.4f} ratio {hi / lo:.3f}")
    if args.csv:
        ev.write_csv(args.csv, ("run", "seed", "rmse", "scale_cv", "ate"), rows)
    return EXIT_OK


def cmd_ablate_clip(args) -> int:
    from .experiments import clip_sweep

    _require_output(args)
    grid = args.dmax
    if not grid or any(d <= ev.CLIP_D_MIN for d in grid):
        raise ConfigError(f"--dmax thresholds must exceed {ev.CLIP_D_MIN} m")
    per_seed = [clip_sweep(seed, grid, args.rel_sigma, args.gain, frame_count=args.frames)
                for seed in _seeds(args)]
    raw = float(np.median([r[None] for r in per_seed]))
    rows = []
    for d in grid:
        med = float(np.median([r[d] for r in per_seed]))
        rows.append((d, med, raw))
        _say(args, f"d_max {d:g} ate {med:.4f} (raw {raw:.4f})")
    if args.csv:
        ev.write_csv(args.csv, ("d_max", "ate", "raw_ate"), rows)
    return EXIT_OK


# ---- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vsslam", description="Synthetic-sensor visual SLAM toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="render a synthetic sequence directory")
    s.add_argument("config", help="scene/trajectory key = value file")
    s.add_argument("out", help="output sequence directory")
    s.add_argument("--seed", type=int, default=None, help="scene seed (overrides the config)")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="track a sequence and write the estimated trajectory")
    r.add_argument("sequence", help="sequence directory")
    r.add_argument("--config", default=None, help="run config key = value file")
    r.add_argument("--out", required=True, help="output trajectory (TUM format)")
    r.add_argument("--no-masks", action="store_true", help="disable dynamic-object masking")
    r.add_argument("--no-depth-prior", action="store_true",
                   help="depth only initializes the map; later points are triangulated")
    r.add_argument("--budget", type=int, default=None, help="feature budget per frame")
    r.add_argument("--clip", type=_clip, default=None, metavar="MIN,MAX",
                   help="usable depth range in meters")
    r.add_argument("--seed", type=int, default=None, help="RANSAC and noise seed")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="evaluate trajectories or depth")
    esub = e.add_subparsers(dest="what", required=True, parser_class=_Parser)
    a = esub.add_parser("ate", help="absolute trajectory error")
    a.add_argument("estimate")
    a.add_argument("groundtruth")
    a.add_argument("--mode", choices=ev.ALIGN_MODES, default="se3")
    a.add_argument("--max-dt", type=float, default=0.02, help="association tolerance (s)")
    a.add_argument("--name", default=None, help="sequence label for the CSV row")
    a.add_argument("--csv", default=None, help="write results as CSV")
    a.set_defaults(func=cmd_eval_ate)
    d = esub.add_parser("depth", help="per-frame depth metrics and their CV")
    d.add_argument("prediction", help="sequence directory with predicted depth")
    d.add_argument("groundtruth", help="sequence directory with ground-truth depth")
    d.add_argument("--strategy", choices=ev.SCALING_STRATEGIES, default="raw")
    d.add_argument("--dmax", type=float, default=None, help="clip threshold for --strategy clip")
    d.add_argument("--csv", default=None, help="write results as CSV")
    d.set_defaults(func=cmd_eval_depth)

    ab = sub.add_parser("ablate", help="ablation sweeps")
    absub = ab.add_subparsers(dest="what", required=True, parser_class=_Parser)
    dr = absub.add_parser("drift", help="Monte-Carlo growth of accumulated error")
    dr.add_argument("--model", choices=ev.DRIFT_MODELS, default="iid")
    dr.add_argument("--phi", type=float, default=0.0, help="AR(1) correlation for --model ar1")
    dr.add_argument("--frames", type=int, default=1024)
    dr.add_argument("--trials", type=int, default=10000)
    dr.add_argument("--sigma", type=float, default=1.0, help="per-step error std")
    dr.add_argument("--seed", type=int, default=0)
    dr.add_argument("--csv", default=None)
    dr.add_argument("--quiet", action="store_true", help="suppress stdout (requires --csv)")
    dr.set_defaults(func=cmd_ablate_drift)
    for name, func, helptext in (("consistency", cmd_ablate_consistency,
                                  "equal per-frame RMSE, different scale CV"),
                                 ("clip-sweep", cmd_ablate_clip, "ATE per depth truncation")):
        c = absub.add_parser(name, help=helptext)
        c.add_argument("--seeds", type=int, default=3, help="number of seeds")
        c.add_argument("--seed", type=int, default=0, help="first seed")
        c.add_argument("--frames", type=int, default=300)
        c.add_argument("--csv", default=None)
        c.add_argument("--quiet", action="store_true", help="suppress stdout (requires --csv)")
        if name == "consistency":
            c.add_argument("--low-cv", type=float, default=0.05)
            c.add_argument("--high-cv", type=float, default=0.15)
        else:
            c.add_argument("--dmax", type=_floats, default=[3.0, 5.0, 7.5, 10.0, 15.0],
                           help="comma-separated thresholds in meters")
            c.add_argument("--rel-sigma", type=float, default=0.1)
            c.add_argument("--gain", type=float, default=0.08)
        c.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"vsslam: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (VSSlamError, FormatError, OSError, ValueError) as exc:
        print(f"vsslam: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
