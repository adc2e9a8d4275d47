"""Write test-split constraint maps of a config to PIXCON files for ``pixgan sample``.

    python3 scripts/export_constraints.py --config scripts/configs/smoke.txt --count 3
"""

import argparse
from pathlib import Path

from pixgan import config as cfgio
from pixgan.config import ExperimentConfig
from pixgan.data import write_constraint_file
from pixgan.experiment import prepare_data


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, required=True)
    ap.add_argument("--out", type=Path, default=Path("constraints"))
    ap.add_argument("--count", type=int, default=1)
    ap.add_argument("--split", default="test", choices=["train", "validation", "test"])
    args = ap.parse_args()
    cfg = cfgio.load(ExperimentConfig, args.config)
    maps = prepare_data(cfg).split.constraints[args.split]
    args.out.mkdir(parents=True, exist_ok=True)
    for k, cmap in enumerate(maps[: args.count]):
        path = args.out / f"{args.split}_{k}.pixcon"
        write_constraint_file(cmap, path)
        print(f"{path}: {cmap.count} constrained pixels, shape {cmap.shape}")


if __name__ == "__main__":
    main()
