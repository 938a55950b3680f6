"""Command line entry point: ``tworing run|preset|compare``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import outputs
from .config import ConfigError, ScenarioConfig, load_config
from .presets import PresetId, compare_runs, preset_variants, run_scenario

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output directory (default: the config's output_dir)")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--replications", type=int, help="number of replications")
    p.add_argument("--parallelism", type=int, default=1, help="worker processes")
    p.add_argument("--horizon", type=float, help="simulated seconds")
    p.add_argument("--trajectory-stride", type=int, default=10,
                   help="write every n-th step to the trajectory CSVs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tworing", description="Two-ring network traffic experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario from a YAML config")
    run.add_argument("--config", required=True, help="flat YAML scenario file")
    _common(run)

    preset = sub.add_parser("preset", help="run a predefined experiment")
    preset.add_argument("--preset", required=True, choices=[p.value for p in PresetId])
    _common(preset)

    cmp_ = sub.add_parser("compare", help="compare bifurcation summary CSVs")
    cmp_.add_argument("summaries", nargs="+", help="bifurcation_*.csv files")
    cmp_.add_argument("--out", help="write the table here instead of stdout")
    return parser


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["base_seed"] = args.seed
    if args.replications is not None:
        out["replications"] = args.replications
    if args.horizon is not None:
        out["horizon_s"] = args.horizon
    if args.out is not None:
        out["output_dir"] = args.out
    return out


def _execute(configs: Sequence[ScenarioConfig], args) -> int:
    if args.trajectory_stride < 1 or args.parallelism < 1:
        print("error: --trajectory-stride and --parallelism must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    failed = 0
    for cfg in configs:
        outcome = run_scenario(cfg, cfg.output_dir, args.parallelism, args.trajectory_stride)
        for rep, err in outcome.failures:
            print(f"{cfg.name}: replication {rep} failed\n{err}", file=sys.stderr)
        failed += len(outcome.failures)
        print(f"{cfg.name}: {len(outcome.summaries) - len(outcome.failures)}/{len(outcome.summaries)} "
              f"replications written to {cfg.output_dir}")
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    return _execute([cfg.replace(**_overrides(args))], args)


def _cmd_preset(args) -> int:
    overrides = _overrides(args)
    overrides.setdefault("output_dir", str(Path("out") / args.preset))
    return _execute(preset_variants(PresetId(args.preset), **overrides), args)


def _cmd_compare(args) -> int:
    try:
        table = compare_runs(args.summaries)
    except ValueError as exc:  # includes SchemaError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME if isinstance(exc, outputs.SchemaError) else EXIT_CONFIG
    if args.out:
        outputs.write_csv(args.out, "comparison", outputs.COMPARISON_COLUMNS, table)
    else:
        print(",".join(outputs.COMPARISON_COLUMNS))
        for row in table:
            print(",".join(outputs.fmt(v) for v in row))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "preset": _cmd_preset, "compare": _cmd_compare}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        keys = f" [{', '.join(exc.keys)}]" if exc.keys else ""
        print(f"config error{keys}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"runtime failure: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
