"""Command-line entry points.

    pdik bench ablation --model FILE --trials N --variants LIST --out DIR
    pdik bench trial --seed S --method M [--replay FILE]
    pdik bench escape-mc --p P --k-list 1,16,64 --trials N
    pdik retarget run --model FILE --traj FILE --config FILE --out metrics.csv

Exit status is 0 on success and 2 on a configuration or input error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bundled_model
from .bench import (
    GENERATORS,
    METHODS,
    EscapeMcConfig,
    TrialConfig,
    Variant,
    escape_mc,
    metrics_csv,
    nominal_posture,
    run_ablation,
    run_trial,
)
from .config import ConfigError, load_config
from .perception import ANCHOR_POINT, KeypointTracker, ScaleSpec, read_keypoint_csv, scale_command
from .retarget import RetargetController, TaskSpec
from .rigidbody import ModelError, RobotModel, check_configuration, frame_positions, load_model_file
from .safety import barrier_terms

log = logging.getLogger("pdik")

DEFAULT_MODEL = "desk_dual_arm"


class UsageError(Exception):
    """Bad input that should end the program with exit status 2."""


def _model(path: str | None) -> RobotModel:
    if path is None:
        return bundled_model(DEFAULT_MODEL)
    p = Path(path)
    if not p.exists():
        try:
            return bundled_model(path)
        except FileNotFoundError:
            raise UsageError(f"model file not found: {path}") from None
    return load_model_file(p)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def _trial_base(args) -> TrialConfig:
    kwargs = dict(horizon=args.horizon, target_generator=args.generator, delay_steps=args.delay)
    if getattr(args, "replay", None):
        kwargs.update(target_generator="replay_file", replay_path=args.replay)
    return TrialConfig(seed=args.seed, **kwargs)


# --------------------------------------------------------------------------
# bench


def cmd_ablation(args) -> int:
    model = _model(args.model)
    variants = [Variant.parse(v) for v in args.variants.split(",") if v.strip()]
    rows, _ = run_ablation(model, args.trials, variants, _trial_base(args), args.out, progress=log.info)
    log.info("wrote %d rows to %s", len(rows), args.out)
    return 0


def cmd_trial(args) -> int:
    model = _model(args.model)
    eta = args.eta if args.eta is not None else TrialConfig.eta
    cfg = replace(_trial_base(args), method=args.method, K=args.K, eta=eta)
    metrics = run_trial(cfg, model)
    sys.stdout.write(metrics_csv([metrics]))
    return 0


def cmd_escape_mc(args) -> int:
    cfg = EscapeMcConfig(p=args.p, K_values=args.k_list, trials=args.trials, seed=args.seed)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["K", "empirical", "predicted"])
    for K, emp, pred in escape_mc(cfg):
        w.writerow([K, f"{emp:.6f}", f"{pred:.6f}"])
    return 0


# --------------------------------------------------------------------------
# retarget


def cmd_retarget_run(args) -> int:
    model = _model(args.model)
    cfg = load_config(args.config, model)
    pipe = cfg.pipeline
    if not pipe.points:
        raise ConfigError("retarget.points must map at least one keypoint to a robot frame")
    try:
        frames = read_keypoint_csv(args.traj)
    except (OSError, KeyError) as exc:
        raise UsageError(f"cannot read keypoints: {exc}") from exc
    q = nominal_posture(model) if args.q0 is None else check_configuration(model, [float(v) for v in args.q0.split(",")])
    anchor_robot = frame_positions(model, q, [pipe.anchor_frame])[0]
    tracker = KeypointTracker(pipe.filter)
    controller = RetargetController(model, cfg.controller)
    robot_frames = list(pipe.points.values())

    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "status", "alpha", "V_before", "V_after", "mean_error", "min_barrier", "flags", "solve_ms"])
        for t, detections in frames:
            filtered = tracker.update(detections)
            if ANCHOR_POINT not in filtered or any(pid not in filtered for pid in pipe.points):
                h, _ = barrier_terms(model, q)
                w.writerow([t, "no_target", "", "", "", "", f"{h.min():.6g}" if h.size else "", "", ""])
                continue
            spec = ScaleSpec(pipe.beta, filtered[ANCHOR_POINT], anchor_robot)
            targets = {frame: scale_command(filtered[pid], spec) for pid, frame in pipe.points.items()}
            task = TaskSpec.from_positions(targets, weight=cfg.task_weight)
            t0 = time.perf_counter()
            result = controller.step(q, task)
            elapsed = time.perf_counter() - t0
            q = np.clip(result.q_next, model.lower, model.upper)
            err = np.linalg.norm(frame_positions(model, q, robot_frames) - np.stack([targets[f] for f in robot_frames]), axis=1).mean()
            h, _ = barrier_terms(model, q)
            alpha = result.selected_alpha
            w.writerow(
                [
                    t,
                    "ok",
                    "" if alpha is None else f"{alpha:.6g}",
                    f"{result.V_before:.6g}",
                    f"{result.V_after:.6g}",
                    f"{err:.6g}",
                    f"{h.min():.6g}" if h.size else "",
                    ";".join(sorted(result.flags)),
                    f"{elapsed * 1e3:.3f}",
                ]
            )
    log.info("wrote %s", args.out)
    return 0


# --------------------------------------------------------------------------
# parser


def _add_trial_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="model file or bundled model name (default: desk dual arm)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=TrialConfig.horizon)
    p.add_argument("--generator", choices=[g for g in GENERATORS if g != "replay_file"], default=TrialConfig.target_generator)
    p.add_argument("--delay", type=int, default=TrialConfig.delay_steps, help="controller observation delay in steps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdik", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    top = parser.add_subparsers(dest="group", required=True)

    bench = top.add_parser("bench", help="benchmark harness").add_subparsers(dest="command", required=True)
    p = bench.add_parser("ablation", help="paired-seed ablation over method variants")
    _add_trial_options(p)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--variants", required=True, help="comma-separated method[:K[:eta]] list; may be empty")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablation)

    p = bench.add_parser("trial", help="one closed-loop trial; prints its metrics row")
    _add_trial_options(p)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--K", type=int, default=1)
    p.add_argument("--eta", type=float)
    p.add_argument("--replay", help="target file (step,frame,x,y,z) to replay instead of generated targets")
    p.set_defaults(func=cmd_trial)

    p = bench.add_parser("escape-mc", help="Monte Carlo check of the escape-probability law")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--k-list", type=_int_list, default=(1, 4, 16, 64))
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_escape_mc)

    retarget = top.add_parser("retarget", help="keypoint retargeting").add_subparsers(dest="command", required=True)
    p = retarget.add_parser("run", help="filter, scale and track a keypoint CSV")
    p.add_argument("--model", help="model file or bundled model name (default: desk dual arm)")
    p.add_argument("--traj", required=True, help="keypoint CSV: t,body_id,point_id,x,y,z,confidence")
    p.add_argument("--config", required=True, help="YAML controller configuration")
    p.add_argument("--out", required=True, help="per-step metrics CSV")
    p.add_argument("--q0", help="comma-separated start configuration (default: nominal posture)")
    p.set_defaults(func=cmd_retarget_run)
    return parser


_INPUT_ERRORS = (ConfigError, ModelError, UsageError, ValueError, KeyError, FileNotFoundError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"pdik: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
