"""Command-line entry point: ``pixgan {train,evaluate,sweep,sample}``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as cfgio
from .config import ConfigError, ExperimentConfig
from .constraints import InvalidInputError
from .data import ConstraintFileError
from .trainer import CheckpointError, NumericalAbort
from .zoo.spec import ArchSpecError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value experiment config")
    common.add_argument("--seed", type=int, help="training seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--lambda", dest="lam", type=float, help="regularization weight")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pixgan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    tr = sub.add_parser("train", parents=[common], help="train one model")
    tr.add_argument("--fresh", action="store_true", help="ignore existing checkpoints")
    ev = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on the test split")
    ev.add_argument("--checkpoint", type=Path, required=True)
    sub.add_parser("sweep", parents=[common], help="train over lambda_grid x seeds")
    sa = sub.add_parser("sample", parents=[common], help="draw constrained samples with overlays")
    sa.add_argument("--checkpoint", type=Path, required=True)
    sa.add_argument("--constraints", type=Path, required=True, help="PIXCON constraint file")
    sa.add_argument("-n", type=int, default=4, help="number of samples")
    sa.add_argument("--eps", type=float, default=0.1, help="squared-error tolerance")
    sa.add_argument("--pixels", action="store_true", help="paint single pixels, not 3x3 blocks")
    return p


def load_config(args) -> ExperimentConfig:
    pairs = cfgio.parse_pairs(args.config.read_text()) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    return cfgio.from_pairs(ExperimentConfig, pairs, seed=args.seed, lam=args.lam,
                            out_dir=None if args.out is None else str(args.out))


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import experiment as ex

    try:
        if args.command == "sample":
            if args.n < 1:
                raise ConfigError("-n must be >= 1")
            seed = args.seed if args.seed is not None else 0
            out = args.out or Path("samples")
            res = ex.sample_checkpoint(args.checkpoint, args.constraints, args.n, args.eps, out,
                                       seed=seed, block=1 if args.pixels else 3)
            for k, frac in enumerate(res["fractions"]):
                print(f"sample {k} satisfied_fraction {frac:.6f}")
            if args.n > 1:
                print(f"diversity {res['diversity']:.6f}")
            return EXIT_OK

        cfg = load_config(args)
        out = Path(cfg.out_dir)
        if args.command == "train":
            run_dir = ex.run_training(cfg, out, resume=not args.fresh)
            print((run_dir / "best_epoch.txt").read_text(), end="")
        elif args.command == "evaluate":
            ex.evaluate_checkpoint(cfg, args.checkpoint, out)
            print((out / "report.txt").read_text(), end="")
            if (out / "BACKEND_MISMATCH").exists():
                print("warning: feature backend differs from the one used in training",
                      file=sys.stderr)
        elif args.command == "sweep":
            ex.sweep(cfg, out)
            print((out / "tradeoff.csv").read_text(), end="")
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, InvalidInputError, ConstraintFileError, CheckpointError,
            ArchSpecError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
