"""Estimation error of the state estimator at several neighbor-sharing levels.

    python scripts/sharing_table.py [--levels 1.0,0.8,0.6,0.4] [--episodes 150]
"""
import argparse
import csv
from pathlib import Path

from satv2x import cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--levels", default="1.0,0.8,0.6,0.4")
    ap.add_argument("--episodes", default="150")
    ap.add_argument("--workers", default="1")
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "sharing")
    args = ap.parse_args()
    code = cli.main(["sweep-sharing", "--config", str(ROOT / "configs" / "toy.ini"), "--sharing", args.levels,
                     "--episodes", args.episodes, "--workers", args.workers, "--out", str(args.out)])
    if code:
        raise SystemExit(code)
    print(f"{'sharing':>8s} {'MSE':>10s} {'RMSE':>10s} {'MAE':>10s} {'R2':>8s} {'acc':>6s}")
    with open(args.out / "sharing.csv") as fh:
        for r in csv.DictReader(fh):
            r2 = f"{float(r['r2']):8.4f}" if r["r2"] else f"{'n/a':>8s}"
            print(f"{float(r['sharing']):8.1f} {float(r['mse']):10.3e} {float(r['rmse']):10.3e} "
                  f"{float(r['mae']):10.3e} {r2} {float(r['accuracy']):6.3f}")


if __name__ == "__main__":
    main()
