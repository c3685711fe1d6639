"""Command-line interface: ``optimize``, ``verify``, ``metrics`` and ``presets``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from .config import list_presets, load_config
from .mesh import ConfigurationError
from .objective import TargetConfigurationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

ENV_OUT = "STRAINTOPO_OUT"
ENV_THREADS = "STRAINTOPO_THREADS"

log = logging.getLogger("straintopo")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="straintopo", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = p.add_subparsers(dest="command", required=True)

    o = sub.add_parser("optimize", help="run an optimization from a TOML config or preset name")
    o.add_argument("config")
    o.add_argument("--out", help=f"output directory (env {ENV_OUT})")
    o.add_argument("--iters", type=int, help="override the iteration cap")
    o.add_argument("--mesh-scale", type=float, default=1.0, help="refine/coarsen the mesh by this factor")
    o.add_argument("--threads", type=int, help=f"load cases solved concurrently (env {ENV_THREADS})")
    o.add_argument("--dump-every", type=int, help="write density/strain snapshots every K iterations")

    v = sub.add_parser("verify", help="finite-difference gradient battery")
    v.add_argument("--quick", action="store_true", help="skip the end-to-end adjoint check")

    m = sub.add_parser("metrics", help="recompute M_nd and RMS errors from a saved state.npz")
    m.add_argument("state")

    sub.add_parser("presets", help="list shipped presets")
    return p


def _resolve(args):
    cfg = load_config(args.config)
    if args.mesh_scale != 1.0:
        cfg = cfg.scaled(args.mesh_scale)
    out = cfg.output
    out_dir = args.out or os.environ.get(ENV_OUT) or out.dir
    threads = args.threads
    if threads is None and os.environ.get(ENV_THREADS):
        try:
            threads = int(os.environ[ENV_THREADS])
        except ValueError as exc:
            raise ConfigurationError(f"{ENV_THREADS} must be an integer") from exc
    out = dataclasses.replace(out, dir=str(out_dir),
                              threads=threads if threads is not None else out.threads,
                              dump_every=args.dump_every if args.dump_every is not None else out.dump_every)
    opt = cfg.optimization
    if args.iters is not None:
        opt = dataclasses.replace(opt, max_iter=args.iters)
    return cfg.replace(output=out, optimization=opt)


def cmd_optimize(args) -> int:
    from .driver import RobustProblem, SolverFailure, final_metrics, run_optimization
    from .io import OutputError, preflight, write_outputs

    try:
        cfg = _resolve(args)
        RobustProblem(cfg)  # geometry and region checks before touching the disk
    except (ConfigurationError, TargetConfigurationError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = preflight(cfg.output.dir)
    except OutputError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    k = cfg.output.dump_every

    def dump(it, result):
        if k and (it + 1) % k == 0:
            write_outputs(result, out / "dumps", prefix=f"iter{it + 1:04d}_")

    try:
        result = run_optimization(cfg, callback=dump if k else None)
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        if exc.result is not None:
            try:
                write_outputs(exc.result, out)
            except OutputError as io_exc:
                print(f"I/O error while saving partial run: {io_exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OutputError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        paths = write_outputs(result, out)
    except OutputError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(final_metrics(result), indent=2))
    print(f"outputs written to {out} ({len(paths)} files)")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_battery

    results = run_battery(quick=args.quick)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_SOLVER


def cmd_metrics(args) -> int:
    from .io import OutputError, metrics_from_state

    if not Path(args.state).exists():
        print(f"I/O error: no such state file {args.state}", file=sys.stderr)
        return EXIT_IO
    try:
        m = metrics_from_state(args.state)
    except OutputError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigurationError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(m, indent=2))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "optimize":
        return cmd_optimize(args)
    if args.command == "verify":
        return cmd_verify(args)
    if args.command == "metrics":
        return cmd_metrics(args)
    print("\n".join(list_presets()))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
