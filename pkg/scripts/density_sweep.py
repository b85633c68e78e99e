"""Final utility of one variant across vehicle densities.

    python scripts/density_sweep.py [--variant FULL] [--densities 16.95,25.42,33.9,42.37]
"""
import argparse
import csv
from pathlib import Path

from satv2x import cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--variant", default="FULL")
    ap.add_argument("--densities", default="16.95,25.42,33.9,42.37")
    ap.add_argument("--episodes", default="150")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--workers", default="1")
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "toy.ini")
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "density")
    args = ap.parse_args()
    code = cli.main(["sweep-density", "--config", str(args.config), "--variant", args.variant,
                     "--density", args.densities, "--episodes", args.episodes, "--seed", args.seeds,
                     "--workers", args.workers, "--out", str(args.out)])
    if code:
        raise SystemExit(code)
    with open(args.out / "density.csv") as fh:
        for r in csv.DictReader(fh):
            print(f"density {float(r['density']):6.2f} ({r['n_vehicles']:>3s} vehicles): {float(r['final_utility']):.3f}")


if __name__ == "__main__":
    main()
