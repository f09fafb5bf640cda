"""Command-line entry point: ``acoustic-grind <command> [--config FILE] [--seed N] ...``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="flat section.key = value file")
    p.add_argument("--seed", type=int, default=0)


def _settings(args):
    from .experiments.settings import load_settings

    return load_settings(args.config)


def cmd_synth_data(args) -> int:
    from .experiments.dataset import DatasetSpec, generate_dataset

    s = _settings(args)
    duration = args.duration if args.duration is not None else s.dataset_duration
    out = generate_dataset(args.out, DatasetSpec(total_duration=duration), seed=args.seed, base=s.loop)
    print(f"dataset written to {out}")
    return 0


def cmd_train(args) -> int:
    from .experiments.dataset import load_dataset
    from .model import save_checkpoint, train, write_history_csv

    s = _settings(args)
    ts = s.train if args.epochs is None else replace(s.train, epochs=args.epochs)
    data = load_dataset(args.data, s.loop.encoder)
    print(f"{len(data.y)} windows; labels near each target: {data.metadata['label_fraction_near_target']}")
    model, history = train(data, ts, seed=args.seed, encoder_config=s.loop.encoder, log=print)
    save_checkpoint(model, args.out)
    hist = Path(args.out).with_suffix(".history.csv")
    write_history_csv(history, hist)
    print(f"checkpoint {args.out}, history {hist}")
    return 0


def _estimator(args, s, feedback: str):
    from .experiments.protocols import calibrate_baseline
    from .model import load_checkpoint

    if feedback == "baseline":
        return calibrate_baseline(s.loop, seed=args.seed + 404)
    if args.checkpoint is None:
        if feedback == "afrg":
            raise SystemExit("--checkpoint is required for afrg feedback")
        return None
    return load_checkpoint(args.checkpoint, s.loop.encoder)


def cmd_run(args) -> int:
    from .experiments.closed_loop import Trial, plant_for, run_trials, step_profile, write_log

    s = _settings(args)
    exp = s.experiment
    if args.feedback:
        exp = replace(exp, feedback=args.feedback)
    if args.scenario:
        exp = replace(exp, scenario=args.scenario)
    if args.targets:
        exp = replace(exp, targets=tuple(args.targets))
    estimator = _estimator(args, s, exp.feedback)
    wp = s.loop.workpiece
    for rep in range(exp.repetitions):
        seed = exp.seeds[rep % len(exp.seeds)] + args.seed * 1000 + rep
        settings = replace(s.loop, plant=plant_for(s.loop, wear_enabled=exp.wear),
                           feedback=exp.feedback, noise=exp.noise_profile, seed=seed)
        if exp.scenario == "fixed_point":
            n = len(exp.targets)
            trials = [Trial(wp.origin_x + wp.length * (i + 0.5) / n, exp.duration, step_profile(t))
                      for i, t in enumerate(exp.targets)]
        else:
            x0 = wp.origin_x + 0.1 * wp.length
            trials = [Trial(x0, exp.path_length / exp.feed_rate, step_profile(exp.targets[0]),
                            feed_rate=exp.feed_rate, x_end=x0 + exp.path_length)]
        log = run_trials(settings, trials, estimator)
        out = write_log(log, Path(args.out) / f"rep{rep}")
        print(f"repetition {rep}: {len(log.records)} steps, trial depths (mm) "
              f"{[round(d * 1e3, 4) for d in log.trial_depths]} -> {out}")
    return 0


def cmd_eval(args) -> int:
    from .experiments.closed_loop import read_log
    from .experiments.metrics import eval_control, eval_estimation, eval_mrr, write_metrics_csv

    rows = {}
    for log_dir in args.log:
        log = read_log(log_dir)
        name = Path(log_dir).name
        est = log.column("f_hat")
        if np.isfinite(est).any():
            rows[f"{name}/estimation"] = eval_estimation(log.column("f_measured"), est)[0]
        first = [r for r in log.records if r["phase"] == "contact" and r["trial"] == 0]
        if first and first[-1]["f_target"] > 0:
            t = np.array([r["t"] for r in first])
            t = t - t[0] + (t[1] - t[0])
            f = np.array([r["f_measured"] for r in first])
            window = (args.steady_start if args.steady_start is not None else t[-1] / 2, t[-1])
            rows[f"{name}/control"] = eval_control(np.concatenate(([0.0], t)), np.concatenate(([0.0], f)),
                                                   first[-1]["f_target"], window, start=0.0)
        if log.trial_depths:
            rows[f"{name}/mrr"] = eval_mrr(log.trial_depths)
    out = Path(args.out)
    write_metrics_csv(rows, out)
    for name, m in rows.items():
        print(name, json.dumps({k: v for k, v in m.as_row().items() if v == v and v not in ("", 0)}))
    print(f"metrics written to {out}")
    return 0


def cmd_report(args) -> int:
    from .experiments.closed_loop import read_log
    from .experiments.metrics import eval_estimation, eval_mrr
    from .experiments.report import report

    s = _settings(args)
    logs = {Path(d).name: read_log(d) for d in args.log}
    metrics = {}
    for name, log in logs.items():
        est = log.column("f_hat")
        if np.isfinite(est).any():
            metrics[f"{name}/estimation"] = eval_estimation(log.column("f_measured"), est)[0]
        if log.trial_depths:
            metrics[f"{name}/mrr"] = eval_mrr(log.trial_depths)
    from .experiments.settings import echo

    config = {"settings": echo(s), "logs": {n: l.settings for n, l in logs.items()}}
    for p in report(logs, metrics, args.out, config=config, workpiece=s.loop.workpiece):
        print(p)
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest() else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acoustic-grind", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="record a synthetic training dataset")
    _common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--duration", type=float, default=None, help="total seconds of audio")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the force regressor on a dataset")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run closed-loop grinding trials")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="log directory")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--feedback", choices=("ft", "afrg", "baseline"), default=None)
    p.add_argument("--scenario", choices=("fixed_point", "straight_line"), default=None)
    p.add_argument("--targets", type=float, nargs="+", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="compute metrics for run logs")
    _common(p)
    p.add_argument("--log", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path, default=Path("metrics.csv"))
    p.add_argument("--steady-start", type=float, default=None, help="s after contact onset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="plots and summary for run logs")
    _common(p)
    p.add_argument("--log", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="shape, numeric-kernel and gradient checks")
    _common(p)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
