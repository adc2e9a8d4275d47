"""Sweep lambda over seeds and tabulate the quality/fidelity trade-off.

    python3 scripts/lambda_tradeoff.py                       # desk preset, ~1 min
    python3 scripts/lambda_tradeoff.py --seeds 0-9           # ten repetitions
    python3 scripts/lambda_tradeoff.py --config my.txt --out runs/mine
"""

import argparse
import logging
from pathlib import Path

from pixgan import config as cfgio
from pixgan.config import PAPER_SWEEP_SEEDS, ExperimentConfig
from pixgan.experiment import summarize_sweep, sweep

HERE = Path(__file__).resolve().parent


def parse_seeds(text):
    if text == "full":
        return PAPER_SWEEP_SEEDS
    if "-" in text:
        lo, hi = (int(t) for t in text.split("-"))
        return tuple(range(lo, hi + 1))
    return tuple(int(t) for t in text.split(","))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=HERE / "configs" / "tradeoff16.txt")
    ap.add_argument("--out", type=Path)
    ap.add_argument("--seeds", help="'0,1,2', '0-9' or 'full' (ten repetitions)")
    ap.add_argument("--lambdas", help="comma-separated grid, e.g. 0,0.1,1,10")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    overrides = {}
    if args.seeds:
        overrides["seeds"] = parse_seeds(args.seeds)
    if args.lambdas:
        overrides["lambda_grid"] = tuple(float(v) for v in args.lambdas.split(","))
    cfg = cfgio.load(ExperimentConfig, args.config, **overrides)
    out = args.out or Path(cfg.out_dir)
    rows = sweep(cfg, out)

    print(f"{'lambda':>8} {'ok':>3} {'median MSE':>12} {'per value':>10} {'median FID':>11}")
    for s in summarize_sweep(rows):
        print(f"{s['lambda']:>8g} {s['n_success']:>3d} {s['mse']:>12.4f} "
              f"{s['mse_per_value']:>10.4f} {s['fid']:>11.4f}")
    print(f"tables in {out}/runs.csv and {out}/tradeoff.csv")


if __name__ == "__main__":
    main()
