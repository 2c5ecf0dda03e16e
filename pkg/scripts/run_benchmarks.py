#!/usr/bin/env python3
"""Benchmark the analytic backward pass against the finite-difference one.

Writes a CSV of timings over simplex degrees, mesh sizes, and resolutions,
and prints the speedup spread.  Small default grids keep a laptop run in
the minutes range; pass wider ranges to reproduce the full scaling plots.
"""

import argparse

from simplexrast.cli import main as cli_main


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--j", default="0,1,2,3")
    p.add_argument("--points", default="5:50:15")
    p.add_argument("--res", default="4,8,16")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default="bench.csv")
    return p.parse_args()


if __name__ == "__main__":
    args = parse_args()
    raise SystemExit(cli_main([
        "bench", "--j", args.j, "--points", args.points, "--res", args.res,
        "--reps", str(args.reps), "--d", str(args.d), "--seed", str(args.seed),
        "--csv", args.csv, "--single-thread"]))
