"""Train every variant on the toy scenario and print a utility table.

    python scripts/toy_ablation.py [--episodes 150] [--workers 1] [--out runs/toy_ablation]
"""
import argparse
import csv
from pathlib import Path

from satv2x import cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", default="150")
    ap.add_argument("--workers", default="1")
    ap.add_argument("--variants", default="FULL,NF,NO_SIL,NO_MHA,MAAC,RANDOM,GREEDY_SINR")
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "toy_ablation")
    args = ap.parse_args()
    code = cli.main(["ablate", "--config", str(ROOT / "configs" / "toy.ini"), "--variant", args.variants,
                     "--density", "8", "--episodes", args.episodes, "--workers", args.workers, "--out", str(args.out)])
    if code:
        raise SystemExit(code)
    with open(args.out / "ablation_grid.csv") as fh:
        for row in csv.DictReader(fh):
            print(f"{row['variant']:12s} {float(row['density_8']):.3f}")


if __name__ == "__main__":
    main()
