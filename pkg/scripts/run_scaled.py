"""Reproduce the reduced-size runs used by the acceptance suite and write all artifacts.

    python3 scripts/run_scaled.py example1 --out runs/example1_scaled
    python3 scripts/run_scaled.py cbm1 --out runs/cbm1_scaled
"""

import argparse
import dataclasses
import json
import logging
import time

from straintopo.config import load_config
from straintopo.driver import final_metrics, run_optimization
from straintopo.io import write_outputs

# preset -> (mesh scale, iterations, beta doubling period or None for the preset's own)
SCALED = {
    "example1": (0.5, 250, None),
    "example2": (0.5, 250, None),
    "example3": (0.5, 250, None),
    "cbm1": (0.8, 150, None),
    "cbm2": (0.8, 150, None),
    "cbm3": (0.8, 150, None),
    "cbm4": (0.8, 150, None),
}


def scaled_config(name: str):
    scale, iters, period = SCALED[name]
    cfg = load_config(name).scaled(scale)
    opt = dataclasses.replace(cfg.optimization, max_iter=iters,
                              beta_period=period or cfg.optimization.beta_period)
    return cfg.replace(optimization=opt)


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("preset", choices=sorted(SCALED))
    p.add_argument("--out", default=None)
    p.add_argument("--quiet", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")

    cfg = scaled_config(args.preset)
    t0 = time.perf_counter()
    result = run_optimization(cfg)
    metrics = final_metrics(result)
    metrics["wall_s"] = time.perf_counter() - t0
    print(json.dumps(metrics, indent=2))
    out = args.out or f"runs/{args.preset}_scaled"
    write_outputs(result, out)
    print(f"artifacts in {out}")


if __name__ == "__main__":
    main()
