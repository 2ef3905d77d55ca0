"""bernnet: train Bernstein-activation networks and run the trainability experiments.

Subcommands:
  train    train every config in the file, one run directory each
  exp1     derivative lower bounds per layer and per depth
  exp2     dead-neuron ratios, first-layer gradient magnitude, heatmaps
  exp3     best training loss versus depth
  approx   approximation error versus depth on synthetic targets
  verify   property battery (gradients, basis identities, bounds, degree probe)

Exit codes: 0 success, 1 usage/config/dataset error, 2 property failure, 3 NaN/Inf.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from app import experiments
from app.config_store import ConfigStore, validate_config
from app.models import DatasetKind, ExperimentConfig
from app.numcore import NonFiniteError
from app.trainer import train_config
from app.verify import FAULT_KINDS, PropertyFailure, format_report, require_all, run_battery

LOGGER = logging.getLogger("app.main")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PROPERTY = 2
EXIT_NUMERIC = 3


def setup_logging() -> None:
    logging.basicConfig(
        level=os.getenv("LOG_LEVEL", "INFO"),
        format="%(asctime)s %(levelname)s [%(name)s] %(message)s",
    )


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.subset_rows is not None:
        dataset = config.dataset
        if dataset.kind == DatasetKind.MNIST.value:
            dataset = dataclasses.replace(dataset, subset_rows=args.subset_rows)
        elif dataset.kind == DatasetKind.HIGGS_CSV.value:
            dataset = dataclasses.replace(dataset, max_rows=args.subset_rows)
        else:
            target = dataclasses.replace(dataset.synthetic, samples=args.subset_rows)
            dataset = dataclasses.replace(dataset, synthetic=target)
        overrides["dataset"] = dataset
    return config.replace(**overrides) if overrides else config


def load_configs(args: argparse.Namespace) -> list[ExperimentConfig]:
    store = ConfigStore(args.config)
    configs = [apply_overrides(config, args) for config in store.configs]
    for config in configs:
        validate_config(config)
    return configs


def _output_dir(args: argparse.Namespace, configs: Sequence[ExperimentConfig]) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(configs[0].out_dir if configs else "runs")


def _print_paths(paths: Sequence[Path]) -> None:
    for path in paths:
        print(path)


def cmd_train(args: argparse.Namespace) -> int:
    configs = load_configs(args)
    for config in configs:
        result = train_config(config, Path(config.out_dir) / experiments.run_name(config))
        print(result.summary())
    return EXIT_OK


def cmd_exp1(args: argparse.Namespace) -> int:
    configs = load_configs(args)
    _print_paths(experiments.cmd_exp1_derivatives(configs, _output_dir(args, configs), args.jobs, args.plot))
    return EXIT_OK


def cmd_exp2(args: argparse.Namespace) -> int:
    configs = load_configs(args)
    _print_paths(experiments.cmd_exp2_dynamics(configs, _output_dir(args, configs), args.jobs, args.plot))
    return EXIT_OK


def cmd_exp3(args: argparse.Namespace) -> int:
    configs = load_configs(args)
    _print_paths(experiments.cmd_exp3_scaling(configs, _output_dir(args, configs), args.jobs, args.plot))
    return EXIT_OK


def cmd_approx(args: argparse.Namespace) -> int:
    configs = load_configs(args)
    out = _output_dir(args, configs)
    for config in configs:
        target_dir = out if len(configs) == 1 else out / experiments.slugify(config.name)
        _print_paths(experiments.cmd_approx_sweep(config, target_dir, args.jobs, args.plot))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    results = run_battery(args.inject_fault)
    print(format_report(results))
    require_all(results)
    return EXIT_OK


COMMANDS = {
    "train": (cmd_train, "Train every config in the file"),
    "exp1": (cmd_exp1, "Minimum |sigma'| per layer and per depth"),
    "exp2": (cmd_exp2, "Dead-neuron ratios, first-layer MAG and heatmaps"),
    "exp3": (cmd_exp3, "Best training loss versus depth"),
    "approx": (cmd_approx, "Approximation error versus depth on synthetic targets"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bernnet", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name, (handler, help_text) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument(
            "--config",
            default=os.getenv("BERNNET_CONFIG", "./config/config.json"),
            help="JSON config: one experiment or {\"runs\": [...]}",
        )
        sub.add_argument("--seed", type=int, help="Override the seed of every run")
        sub.add_argument("--out", help="Output directory")
        sub.add_argument("--subset-rows", type=int, help="MNIST training subset / HIGGS row cap / synthetic sample count")
        if name != "train":
            sub.add_argument("--jobs", type=int, default=1, help="Worker processes for independent runs")
            sub.add_argument("--plot", action="store_true", help="Also render SVG figures")
        sub.set_defaults(handler=handler)

    verify = subparsers.add_parser("verify", help="Run the property battery")
    verify.add_argument("--inject-fault", choices=FAULT_KINDS, help="Perturb the backward pass of one layer kind")
    verify.set_defaults(handler=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except PropertyFailure as exc:
        LOGGER.error("Property failure: %s", exc)
        return EXIT_PROPERTY
    except NonFiniteError as exc:
        LOGGER.error("Numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        LOGGER.error("%s", exc)
        return EXIT_USAGE
    except Exception:
        LOGGER.exception("Unexpected failure in %s", args.command)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
