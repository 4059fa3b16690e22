"""Expected remaining wait T(t) = E[T - t | T > t] at F = 0.99 for several k."""

import argparse
from pathlib import Path

import numpy as np

from dualchain.ensemble import RunPlan, run_ensemble
from dualchain.model import ChainConfig
from dualchain.stats import ArrivalSample, remaining_time_curve, trend_slope, write_tbar_csv


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--k", type=float, nargs="+", default=[2.0, 4.0, 6.0, 8.0])
    p.add_argument("--threshold", type=float, default=0.99)
    p.add_argument("--trajectories", type=int, default=1024)
    p.add_argument("--t-end", type=float, default=200.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", default="auto")
    p.add_argument("--out", type=Path, default=Path("results/tbar"))
    args = p.parse_args()

    base = ChainConfig()
    plan = RunPlan(base=base, k_values=tuple(args.k), thresholds=(args.threshold,),
                   n_trajectories=args.trajectories, master_seed=args.seed,
                   worker_count=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    result = run_ensemble(plan, checkpoint=args.out / "checkpoint.jsonl", progress=print)
    grid = np.arange(0.0, args.t_end + 1.0, 1.0)
    for k in args.k:
        sample = ArrivalSample.from_outcomes(result.outcomes(k, args.threshold), base.t_max)
        curve = remaining_time_curve(sample, grid)
        write_tbar_csv(args.out / f"tbar_k{k:g}.csv", curve)
        print(f"k={k:g}: T(0) = {curve.values[0]:.1f}, slope on [0, {args.t_end:g}] = "
              f"{trend_slope(curve, 0, args.t_end):.3f}")


if __name__ == "__main__":
    main()
