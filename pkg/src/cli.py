"""
Command-line surface: simulate | solve | bench | report.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import version
from bench import (
    Bench,
    BenchSignalType,
    RunLog,
    connect_bench_signal,
    disconnect_bench_signal,
    install_fail_fast,
    load_workspace,
    parse_method,
    report,
    simulate,
    solve_scenario,
    write_solution,
)
from exceptions import ConfigurationError, MoeaarException, StopBench
from main import CFG_PATH
from moeaar_logger import get_logger, set_level
from run_config import RunConfig, dump_config, load_config

log = get_logger("moeaar")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# Picked up when --config is not given.
DEFAULT_CONFIG = CFG_PATH.joinpath("moeaar.cfg")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration file")
    common.add_argument(
        "--seed",
        type=int,
        help="suite seed (simulate, bench) or row seed to replay (solve)",
    )
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--verbose", action="store_true", help="debug logging")
    common.add_argument(
        "--print-config",
        action="store_true",
        help="print the fully defaulted configuration and exit",
    )

    parser = argparse.ArgumentParser(
        prog="moeaar",
        description="EEG source localization benchmark: MOEAAR against "
        "Ridge-L, LASSO and ENET-L.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {version.__version__}"
    )
    parser.add_argument(
        "--print-config",
        action="store_true",
        help="print the fully defaulted configuration and exit",
    )
    commands = parser.add_subparsers(dest="command")

    commands.add_parser(
        "simulate", parents=[common], help="build head model, lead field and suite"
    )

    solve = commands.add_parser(
        "solve", parents=[common], help="run one method on one scenario"
    )
    solve.add_argument("--method", required=True, help="method name")
    solve.add_argument("--scenario", required=True, help="scenario label")

    bench = commands.add_parser(
        "bench", parents=[common], help="methods x scenarios x repeats"
    )
    bench.add_argument(
        "--method",
        action="append",
        dest="methods",
        help="restrict to this method (repeatable)",
    )
    bench.add_argument(
        "--fail-fast", action="store_true", help="abort on the first failed row"
    )

    summary = commands.add_parser(
        "report", parents=[common], help="summarize results.csv"
    )
    summary.add_argument("--results", type=Path, help="results.csv or its directory")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    path = getattr(args, "config", None)
    if path is None and DEFAULT_CONFIG.is_file():
        path = DEFAULT_CONFIG
    config = load_config(path)
    overrides = {}
    seed = getattr(args, "seed", None)
    if seed is not None and args.command != "solve":
        overrides["suite__seed"] = seed
    if getattr(args, "out", None) is not None:
        overrides["bench__out_dir"] = str(args.out)
    if getattr(args, "fail_fast", False):
        overrides["bench__fail_fast"] = True
    return config.with_overrides(**overrides) if overrides else config


def print_progress(sig_type, message, args, _msg_type) -> None:
    if sig_type is BenchSignalType.PROGRESS:
        print(f"[{message.format(*args)}]", flush=True)


def cmd_simulate(config: RunConfig, out_dir: Path) -> int:
    simulate(config, out_dir)
    return EXIT_OK


def cmd_solve(
    config: RunConfig, out_dir: Path, method: str, label: str, seed: Optional[int]
) -> int:
    chosen = parse_method(method)
    workspace = load_workspace(out_dir)
    result = solve_scenario(
        chosen, workspace.scenario(label), workspace, config, seed, config.workers
    )
    target = write_solution(result, out_dir)
    metrics = result.metrics
    log.info(
        "%s on %s: localization %.4f, visibility %.4f, resolution %.4f -> %s",
        chosen.value,
        label,
        metrics.localization_score,
        metrics.visibility_score,
        metrics.spatial_resolution_score,
        target,
    )
    return EXIT_OK


def cmd_bench(
    config: RunConfig, out_dir: Path, methods: Optional[Sequence[str]]
) -> int:
    runner = Bench(config, out_dir, methods)
    handler = install_fail_fast(runner) if config.bench.fail_fast else None
    connect_bench_signal(print_progress)
    try:
        rows = runner.run()
    finally:
        disconnect_bench_signal(print_progress)
        if handler is not None:
            log.removeHandler(handler)
    if any(row["status"] != "ok" for row in rows):
        return EXIT_FAILURE
    return EXIT_OK


def cmd_report(results: Path) -> int:
    report(results)
    return EXIT_OK


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "verbose", False):
        set_level(log, logging.DEBUG)

    try:
        config = resolve_config(args)
        if args.print_config:
            print(dump_config(config), end="")
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            log.error("No command given.")
            return EXIT_USAGE

        out_dir = Path(config.bench.out_dir)
        if args.command == "report":
            return cmd_report(args.results or out_dir)

        out_dir.mkdir(parents=True, exist_ok=True)
        with RunLog(out_dir):
            if args.command == "simulate":
                return cmd_simulate(config, out_dir)
            if args.command == "solve":
                return cmd_solve(config, out_dir, args.method, args.scenario, args.seed)
            return cmd_bench(config, out_dir, args.methods)
    except ConfigurationError as ex:
        log.error("%s", ex)
        return EXIT_USAGE
    except StopBench:
        log.info("Bench aborted.")
        return EXIT_FAILURE
    except MoeaarException as ex:
        log.critical("%s", ex)
        return EXIT_FAILURE
