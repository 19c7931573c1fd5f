"""Command-line front end: run scenarios, batteries, and result reports.

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 battery
completed with failed seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .harness import (
    PSEUDO_REAL_AGENT,
    Scenario,
    ScenarioError,
    battery_definition,
    median_iqr,
    read_log_csv,
    recompute_from_csv,
    run_battery,
    run_scenario_seed,
    scenario_from_dict,
)
from .trainer import ConfigError, PretrainTargetError, TrainingDivergedError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


def _parse_override(text: str):
    """key.path=value with TOML-style literal values."""
    if "=" not in text:
        raise ScenarioError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key.strip(), value


def _apply_overrides(config: dict, overrides: list[str]) -> dict:
    for text in overrides:
        key, value = _parse_override(text)
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return config


def _load_scenario(path: str, overrides: list[str]) -> Scenario:
    with open(path, "rb") as fh:
        config = tomllib.load(fh)
    _apply_overrides(config, overrides)
    return scenario_from_dict(config)


def cmd_run(args) -> int:
    scenario = _load_scenario(args.scenario, args.override)
    seeds = [args.seed] if args.seed is not None else list(scenario.seeds)
    out = Path(args.out)
    cache = Path(args.pretrain_cache) if args.pretrain_cache else out / "pretrain_cache"
    failed = False
    for seed in seeds:
        result = run_scenario_seed(scenario, seed, out, pretrain_cache=cache)
        status = "FAILED (pretrain)" if result.failed else f"steps_to_{scenario.threshold_pct:g}={result.steps_to_threshold}"
        print(f"{scenario.name} seed {seed}: {status}")
        failed |= result.failed
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_battery(args) -> int:
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else tuple(range(10))
    if args.name.endswith(".toml"):
        scenarios = [_load_scenario(args.name, args.override)]
        name = scenarios[0].name
    else:
        scenarios = battery_definition(args.name, seeds=seeds)
        if args.override:
            patched = []
            for scn in scenarios:
                d = scn.to_dict()
                d["pretrain"] = d.pop("pretrain_overrides")
                d["trainer"] = d.pop("trainer_overrides")
                _apply_overrides(d, args.override)
                patched.append(scenario_from_dict(d))
            scenarios = patched
        name = args.name
    out = Path(args.out)
    cache = Path(args.pretrain_cache) if args.pretrain_cache else None
    summary = run_battery(scenarios, out, battery_name=name, pretrain_cache=cache)
    for scn_name, entry in summary["scenarios"].items():
        stats = entry["steps_to_threshold"]
        print(
            f"{scn_name}: median={stats['median']} "
            f"IQR=[{stats['iqr_low']}, {stats['iqr_high']}] "
            f"reached {stats['reached']}/{stats['total']}"
        )
    return EXIT_PARTIAL if summary["any_failed"] else EXIT_OK


def cmd_report(args) -> int:
    """Recompute medians from raw CSVs and check the stored summary."""
    results_dir = Path(args.results)
    csv_paths = sorted(results_dir.glob("*.csv"))
    if not csv_paths:
        print(f"no run CSVs under {results_dir}", file=sys.stderr)
        return EXIT_CONFIG
    window = args.window
    by_scenario: dict[str, list] = {}
    for path in csv_paths:
        rows = read_log_csv(path)
        if not rows:
            continue
        scenario = rows[0]["scenario"]
        seed = rows[0]["seed"]
        reached, _ = recompute_from_csv(path, PSEUDO_REAL_AGENT, args.threshold, window)
        by_scenario.setdefault(scenario, []).append((seed, reached))

    report = {}
    for scenario, entries in sorted(by_scenario.items()):
        stats = median_iqr([r for _, r in entries])
        report[scenario] = {
            "per_seed": {str(s): r for s, r in sorted(entries)},
            "steps_to_threshold": stats,
        }
        print(
            f"{scenario}: median={stats['median']} reached {stats['reached']}/{stats['total']}"
        )

    out_path = results_dir / "report.json"
    out_path.write_text(json.dumps(report, indent=2))

    summary_path = results_dir / "battery_summary.json"
    if summary_path.exists():
        stored = json.loads(summary_path.read_text())
        for scenario, entry in report.items():
            stored_entry = stored["scenarios"].get(scenario)
            if stored_entry is None:
                continue
            if stored_entry["steps_to_threshold"]["median"] != entry["steps_to_threshold"]["median"]:
                print(f"median mismatch for {scenario}", file=sys.stderr)
                return EXIT_RUNTIME
        print("stored battery summary matches recomputation")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csar",
        description="Consensus-coupled sim-and-real training experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario config file")
    p_run.add_argument("scenario", help="path to a scenario .toml")
    p_run.add_argument("--seed", type=int, default=None, help="run a single seed")
    p_run.add_argument("--out", default="results", help="output directory")
    p_run.add_argument("--pretrain-cache", default=None)
    p_run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p_run.set_defaults(func=cmd_run)

    p_bat = sub.add_parser("battery", help="run a built-in battery (fig3|fig5|fig6)")
    p_bat.add_argument("name", help="battery name or scenario .toml")
    p_bat.add_argument("--out", default="results", help="output directory")
    p_bat.add_argument("--seeds", default=None, help="comma-separated seed list")
    p_bat.add_argument("--pretrain-cache", default=None)
    p_bat.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p_bat.set_defaults(func=cmd_battery)

    p_rep = sub.add_parser("report", help="recompute metrics from result CSVs")
    p_rep.add_argument("results", help="directory holding run CSVs")
    p_rep.add_argument("--threshold", type=float, default=80.0)
    p_rep.add_argument("--window", type=int, default=20)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ConfigError, FileNotFoundError, tomllib.TOMLDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, PretrainTargetError, OSError) as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
