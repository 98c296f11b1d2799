"""
Command-line entry point for Interpretable Bandit Bench
bench run | bench plot | bench list-configs
"""

import argparse
import glob
import logging
import os
import sys
from typing import List, Optional

from config import Config
from errors import BenchIOError, ConfigError, InputError, InvariantViolation

logging.basicConfig(
    level=getattr(logging, Config.LOG_LEVEL, logging.INFO),
    format="%(asctime)s [%(levelname)s] %(name)s - %(message)s",
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3


class HelpTexts:
    """Command descriptions"""

    RUN = (
        "Run an experiment file: every algorithm for every run, then write "
        "raw.csv, aggregate.csv, regret.svg and interpretability.svg."
    )
    PLOT = "Re-render regret.svg and interpretability.svg from an existing aggregate.csv."
    LIST = "List the experiment files shipped in the config directory."
    EPILOG = "Environment: BENCH_THREADS caps worker processes (0 = one per physical core)."


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=Config.BENCH_NAME, epilog=HelpTexts.EPILOG)
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help=HelpTexts.RUN, description=HelpTexts.RUN)
    run.add_argument("--config", required=True, help="TOML experiment file")
    run.add_argument("--seed", type=int, default=None, help="override the base seed")
    run.add_argument("--runs", type=int, default=None, help="override the number of runs")
    run.add_argument("--out", default=None, help="override the output directory")
    run.add_argument("--full-trace", action="store_true", help="log every round instead of checkpoints")

    plot = commands.add_parser("plot", help=HelpTexts.PLOT, description=HelpTexts.PLOT)
    plot.add_argument("--in", dest="indir", required=True, help="directory holding aggregate.csv")

    commands.add_parser("list-configs", help=HelpTexts.LIST, description=HelpTexts.LIST)
    return parser


def run_command(args: argparse.Namespace) -> int:
    from harness import load_experiment_config, run_experiment
    from outputs import emit_outputs

    cfg = load_experiment_config(
        args.config,
        seed=args.seed,
        runs=args.runs,
        output_dir=args.out,
        full_trace=True if args.full_trace else None,
    )
    logger.info("=" * 50)
    logger.info("Experiment %s: n=%d, %d runs, seed %d", cfg.name, cfg.horizon, cfg.runs, cfg.seed)
    logger.info("Algorithms: %s", ", ".join(cfg.algorithm_names))
    logger.info("=" * 50)

    table = run_experiment(cfg)
    for path in emit_outputs(table, cfg.output_dir):
        print(path)
    return EXIT_OK


def plot_command(args: argparse.Namespace) -> int:
    from outputs import replot

    for path in replot(args.indir):
        print(path)
    return EXIT_OK


def list_configs_command(args: argparse.Namespace) -> int:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib

    paths = sorted(glob.glob(os.path.join(Config.CONFIG_DIR, "*.toml")))
    if not paths:
        logger.warning("No experiment files in %s", Config.CONFIG_DIR)
    for path in paths:
        try:
            with open(path, "rb") as f:
                name = tomllib.load(f).get("name", "")
        except (OSError, tomllib.TOMLDecodeError):
            logger.exception("Cannot read %s", path)
            name = "<unreadable>"
        print(f"{os.path.basename(path)}\t{name}")
    return EXIT_OK


COMMANDS = {
    "run": run_command,
    "plot": plot_command,
    "list-configs": list_configs_command,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InputError) as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except (BenchIOError, OSError) as e:
        logger.error("I/O error: %s", e)
        return EXIT_IO
    except InvariantViolation as e:
        logger.error("Invariant violated: %s", e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
