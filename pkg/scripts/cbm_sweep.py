"""Strain-magnitude sweep over CBM I-IV: mean window strain against the 5/10/15/20% targets.

    python3 scripts/cbm_sweep.py --mesh-scale 0.4 --iters 150
"""

import argparse
import csv
import dataclasses
import sys

from straintopo.config import load_config
from straintopo.driver import final_metrics, run_optimization


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--mesh-scale", type=float, default=0.4)
    p.add_argument("--iters", type=int, default=150)
    p.add_argument("--csv", default=None, help="also write the table to this file")
    args = p.parse_args()

    rows = []
    for i in range(1, 5):
        cfg = load_config(f"cbm{i}").scaled(args.mesh_scale)
        cfg = cfg.replace(optimization=dataclasses.replace(cfg.optimization, max_iter=args.iters))
        m = final_metrics(run_optimization(cfg))
        rel = (m["mean_exx"] - cfg.target.exx) / cfg.target.exx
        rows.append([f"cbm{i}", cfg.target.exx, m["mean_exx"], rel, m["Err_x"], m["Mnd"]])
        print(f"cbm{i}: target {cfg.target.exx:.2f} mean {m['mean_exx']:.4f} ({100 * rel:+.1f}%) "
              f"Err_x {m['Err_x']:.2f}% Mnd {m['Mnd']:.2f}%", flush=True)

    header = ["case", "target_exx", "mean_exx", "rel_dev", "Err_x", "Mnd"]
    w = csv.writer(open(args.csv, "w", newline="") if args.csv else sys.stdout)
    w.writerow(header)
    w.writerows(rows)


if __name__ == "__main__":
    main()
