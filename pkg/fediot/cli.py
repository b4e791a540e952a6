"""
Command-line entry point.

    fediot synth   --config CFG --out DIR
    fediot run     --config CFG --out DIR [--seed N] [--aggregator NAME]
    fediot compare --config CFG --out DIR [--seeds 0 1 2]
    fediot local   --config CFG --out DIR [--seed N]
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from fediot.config import load_config
from fediot.errors import (
    ConfigurationError,
    DataFormatError,
    FederationError,
    FedIoTError,
    MetricsError,
)
from fediot.runner import ExperimentRunner

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CODES = {
    ConfigurationError: 2,
    DataFormatError: 3,
    OSError: 4,
    FederationError: 5,
    MetricsError: 6,
}


def configure_logging(level: str, log_file: Optional[Path] = None) -> None:
    """Console logging plus an optional run log file."""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT,
                        handlers=handlers, force=True)


def exit_code_for(error: BaseException) -> int:
    for kind, code in EXIT_CODES.items():
        if isinstance(error, kind):
            return code
    return EXIT_UNEXPECTED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fediot",
        description="Federated autoencoder anomaly detection simulator for IoT traffic",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="Flat JSON config file")
        p.add_argument("--out", type=str, default=None, help="Output directory")
        p.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    p_synth = sub.add_parser("synth", help="Write synthetic per-device CSV files")
    common(p_synth)
    p_synth.add_argument("--seed", type=int, default=None)

    p_run = sub.add_parser("run", help="Run one federated experiment")
    common(p_run)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--aggregator", default=None, help="fedavg or fedavgm")

    p_compare = sub.add_parser("compare", help="FedAvg vs FedAvgM on identical data")
    common(p_compare)
    p_compare.add_argument("--seed", type=int, default=None)
    p_compare.add_argument("--seeds", type=int, nargs="+", default=None,
                           help="Repeat the comparison for each seed and report medians")

    p_local = sub.add_parser("local", help="Local-only detection baseline")
    common(p_local)
    p_local.add_argument("--seed", type=int, default=None)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    return {
        "out_dir": args.out,
        "seed": args.seed,
        "log_level": args.log_level,
        "aggregator": getattr(args, "aggregator", None),
    }


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run the command and map failures to exit codes.

    Returns:
        0 on success, otherwise the exit code of the failure category
    """
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, _overrides(args))
        configure_logging(config.log_level, Path(config.out_dir) / "run.log")
        runner = ExperimentRunner(config)

        if args.command == "synth":
            paths = runner.synth()
            runner.print_summary(title="SYNTH SUMMARY")
            print(f"✅ Wrote {len(paths)} device files to {config.out_dir}")
        elif args.command == "run":
            outcome = runner.run()
            runner.print_summary(outcome.report)
            print(f"✅ Metrics written to {outcome.bundle.metrics_csv}")
        elif args.command == "local":
            outcome = runner.local()
            runner.print_summary(outcome.report, title="LOCAL BASELINE SUMMARY")
            print(f"✅ Metrics written to {outcome.bundle.metrics_csv}")
        elif args.command == "compare":
            table = runner.compare(args.seeds)
            print(table.to_string(index=False))
            runner.print_summary(title="COMPARISON SUMMARY")
            print(f"✅ Comparison written to {Path(config.out_dir) / 'comparison.csv'}")
        return EXIT_OK
    except (FedIoTError, OSError) as e:
        code = exit_code_for(e)
        logger.error(f"{type(e).__name__}: {e}")
        print(f"fediot: error: {e}", file=sys.stderr)
        return code
    except Exception as e:
        logger.exception("Unexpected failure")
        print(f"fediot: unexpected error: {e}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
