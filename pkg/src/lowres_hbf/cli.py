"""Command-line entry point: ``lowres-hbf {generate,train,evaluate,bench}``.

Exit codes: 0 success, 1 usage/config error, 2 data or file-format error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments
from .baselines import InstanceTooLargeError
from .channel import DatasetFormatError
from .config import ConfigError, load_config
from .numerics import ConvergenceError, SingularMatrixError
from .pcnet import ModelFormatError, ShapeMismatchError, TrainingDivergedError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file layered over the scale preset")
    common.add_argument("--scale", default="desk", choices=["full", "desk", "tiny"])
    common.add_argument("--seed", type=int, help="override channel and training seeds")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--designers", help="comma list, e.g. random,svd,ce:3,pcnet")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="lowres-hbf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", parents=[common], help="write train/val/test datasets")
    gen.add_argument("--n-train", type=int)
    gen.add_argument("--n-val", type=int)
    gen.add_argument("--n-test", type=int)

    tr = sub.add_parser("train", parents=[common], help="train PCNet")
    tr.add_argument("--train", dest="train_path")
    tr.add_argument("--val", dest="val_path")
    tr.add_argument("--model", help="checkpoint output path (default <out>/model.pcnw)")

    ev = sub.add_parser("evaluate", parents=[common], help="sum-rate sweep over SNR and K")
    ev.add_argument("--test", dest="test_path")
    ev.add_argument("--model", help="PCNet checkpoint (needed for the pcnet designer)")

    be = sub.add_parser("bench", parents=[common], help="time beamformer construction")
    be.add_argument("--test", dest="test_path")
    be.add_argument("--model")
    be.add_argument("--n-timed", type=int)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, scale=args.scale, seed=args.seed, output_dir=args.out,
                          designers=args.designers)
        if args.command == "generate":
            paths = experiments.run_generate(cfg, args.n_train, args.n_val, args.n_test)
            for p in paths.values():
                print(p)
        elif args.command == "train":
            paths = experiments.run_train(cfg, args.train_path, args.val_path, args.model)
            print(paths["model"])
            print(paths["history"])
        elif args.command == "evaluate":
            print(experiments.run_evaluate(cfg, args.test_path, args.model))
        elif args.command == "bench":
            print(experiments.run_bench(cfg, args.test_path, args.model, args.n_timed))
    except (ConfigError, InstanceTooLargeError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetFormatError, ModelFormatError, ShapeMismatchError,
            experiments.DataMismatchError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, SingularMatrixError, ConvergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
