"""Command-line entry point.

    fedaudit validate --config run.cfg
    fedaudit run      --config run.cfg --out results/run1 [--seed 7]
    fedaudit sweep    --config run.cfg --sweep canary.epochs=1,3,5 --out results/grid

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import ConfigError, ExperimentConfig, config_text, load_config, set_key
from .engine import run_experiment
from .metrics import emit_csv, mean_f1_by_detector


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedaudit",
        description="Federated-learning free-rider detection experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("run", "execute one experiment and write CSV outputs"),
        ("sweep", "expand one config key over a grid of values"),
        ("validate", "check a config file without running"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", required=True, help="path to the key=value config file")
        if name != "validate":
            p.add_argument("--out", default="results", help="output directory")
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name == "sweep":
            p.add_argument(
                "--sweep",
                required=True,
                metavar="KEY=V1,V2,...",
                help="config key and comma-separated values to grid over",
            )
    return parser


def _execute(cfg: ExperimentConfig, outdir: str) -> dict[str, float]:
    """Run one experiment, write its outputs, return mean F1 per detector."""
    collected = []

    def stream():
        for result in run_experiment(cfg):
            collected.append(result.metrics)
            yield result

    emit_csv(stream(), outdir, config_text(cfg))
    return mean_f1_by_detector(collected, cfg.skip_rounds)


def _run_command(cfg: ExperimentConfig, outdir: str) -> int:
    summary = _execute(cfg, outdir)
    for name, f1 in summary.items():
        print(f"{name}: mean round F1 = {f1:.3f}")
    print(f"outputs written to {outdir}")
    return 0


def _sweep_command(cfg: ExperimentConfig, outdir: str, sweep: str) -> int:
    if "=" not in sweep:
        raise ConfigError("--sweep expects KEY=V1,V2,...")
    key, _, raw_values = sweep.partition("=")
    key = key.strip()
    values = [v.strip() for v in raw_values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--sweep needs at least one value")

    os.makedirs(outdir, exist_ok=True)
    summary_rows = []
    for value in values:
        variant = set_key(cfg, key, value)
        per_repeat: dict[str, list[float]] = {}
        for rep in range(variant.repeats):
            run_cfg = variant.with_seed(variant.seed + rep)
            subdir = os.path.join(outdir, f"{key}={value}")
            if variant.repeats > 1:
                subdir = os.path.join(subdir, f"rep{rep}")
            f1s = _execute(run_cfg, subdir)
            for name, f1 in f1s.items():
                per_repeat.setdefault(name, []).append(f1)
        for name in sorted(per_repeat):
            vals = per_repeat[name]
            summary_rows.append(
                (value, name, float(np.mean(vals)), float(np.std(vals)), len(vals))
            )
        print(f"{key}={value}: done ({variant.repeats} repeat(s))")

    summary_path = os.path.join(outdir, "summary.csv")
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{key},detector,mean_f1,std_f1,repeats\n")
        for value, name, mean, std, reps in summary_rows:
            fh.write(f"{value},{name},{format(mean, '.17g')},{format(std, '.17g')},{reps}\n")
    print(f"sweep summary written to {summary_path}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if getattr(args, "seed", None) is not None:
            cfg = cfg.with_seed(args.seed)
        if args.command == "validate":
            print(f"{args.config}: ok")
            return 0
        if args.command == "run":
            return _run_command(cfg, args.out)
        return _sweep_command(cfg, args.out, args.sweep)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # surfaced with context, non-zero exit
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
