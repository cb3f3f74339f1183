"""Command-line entry point: ``burden-control {run,sweep,metrics}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_experiment, load_sweep
from .experiment import emit_policy_sweep, recompute_metrics, run_experiment


def _cmd_run(args) -> int:
    config = load_experiment(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    out = Path(args.out or config.output_dir)
    result = run_experiment(config, jobs=args.jobs, out_dir=out)
    for name, entry in result.summary["controllers"].items():
        last = entry["days"].get(str(config.max_horizon))
        if last:
            print(f"{name:>16s}  reward {last['cumulative_avg_reward']['mean']:.4f}  "
                  f"optimal {last['cumulative_optimal_fraction']['mean']:.4f}  "
                  f"({entry['completed']}/{config.replications} ok)")
    comp = result.summary["comparability"]
    if comp:
        print(f"day {comp['day']} spread <= {comp['threshold']} in "
              f"{100 * comp['fraction_within']:.0f}% of replications")
    print(f"wrote {out}")
    if result.failures:
        print(f"{len(result.failures)} replication(s) failed", file=sys.stderr)
        return 1
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_sweep(args.config)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_{cfg.parameter}.csv"
    rows = emit_policy_sweep(cfg.base, cfg.parameter, cfg.values, cfg.vi, path)
    seen = {}
    for r in rows:
        seen.setdefault(r["value"], (r["classification"], r["thresholds"]))
    for value, (kind, th) in seen.items():
        print(f"{cfg.parameter}={value:g}: {kind} {th}")
    with open(out / f"sweep_{cfg.parameter}.json", "w") as fh:
        json.dump([{"value": v, "classification": k,
                    "thresholds": [float(t) for t in th.split(";") if t]}
                   for v, (k, th) in seen.items()], fh, indent=2)
    print(f"wrote {path}")
    return 0


def _cmd_metrics(args) -> int:
    for path in recompute_metrics(args.run_dir):
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="burden-control",
                                     description="Adaptive treatment-burden experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a replicated experiment")
    run.add_argument("config", help="experiment YAML file")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")
    run.add_argument("--seed", type=int, help="master seed override")
    run.set_defaults(func=_cmd_run)

    sweep = sub.add_parser("sweep", help="policy structure under a one-parameter sweep")
    sweep.add_argument("config", help="sweep YAML file")
    sweep.add_argument("--out", help="output directory (overrides the config)")
    sweep.set_defaults(func=_cmd_sweep)

    met = sub.add_parser("metrics", help="recompute metrics from stored per-step CSVs")
    met.add_argument("run_dir", help="directory written by 'run'")
    met.set_defaults(func=_cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
