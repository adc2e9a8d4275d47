"""Train on synthetic channelised facies and compare texture statistics.

Reports HOG and LBP chi-square distances between real and generated test
images and writes connectivity curves for both sets (plotted when
matplotlib is available).

    python3 scripts/subsurface_eval.py
"""

import argparse
import csv
import logging
from pathlib import Path

from pixgan import config as cfgio
from pixgan.config import ExperimentConfig
from pixgan.experiment import (best_checkpoint, evaluate_generator, make_extractor,
                               prepare_data, run_training)
from pixgan.trainer import restore_state

HERE = Path(__file__).resolve().parent


def plot_curves(out_dir):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return None
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True, sharey=True)
    for name, style in (("real", "k-"), ("generated", "r--")):
        rows = list(csv.DictReader(open(out_dir / f"connectivity_{name}.csv")))
        for i, facies in enumerate("01"):
            for j, direction in enumerate(("horizontal", "vertical")):
                sel = [r for r in rows if r["facies"] == facies and r["direction"] == direction]
                axes[i, j].plot([int(r["lag"]) for r in sel],
                                [float(r["probability"]) for r in sel], style, label=name)
                axes[i, j].set_title(f"facies {facies}, {direction}")
    axes[0, 0].legend()
    fig.tight_layout()
    path = out_dir / "connectivity.png"
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=HERE / "configs" / "subsurface.txt")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = cfgio.load(ExperimentConfig, args.config)
    out = args.out or Path(cfg.out_dir)
    run_dir = run_training(cfg, out)
    state = restore_state(best_checkpoint(run_dir))
    data = prepare_data(cfg)
    scores = evaluate_generator(state.generator, state.latent, cfg, data,
                                make_extractor(cfg, data), run_dir / "test", epoch=state.epoch)
    for key in ("mse", "hog_chi2", "lbp1_chi2", "lbp2_chi2", "diversity"):
        print(f"{key:>10}: {scores[key]:.5f}")
    plot = plot_curves(run_dir / "test")
    if plot:
        print(f"connectivity curves: {plot}")


if __name__ == "__main__":
    main()
