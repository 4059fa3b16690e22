"""Mean arrival time versus measurement strength for three fidelity thresholds."""

import argparse
from pathlib import Path

from dualchain.ensemble import RunPlan, run_ensemble
from dualchain.model import ChainConfig
from dualchain.stats import optimal_k, sweep_curve, write_summary_csv


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--k", type=float, nargs="+", default=[0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0])
    p.add_argument("--thresholds", type=float, nargs="+", default=[0.9, 0.99, 0.999])
    p.add_argument("--trajectories", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", default="auto")
    p.add_argument("--out", type=Path, default=Path("results/sweep"))
    args = p.parse_args()

    plan = RunPlan(base=ChainConfig(), k_values=tuple(args.k), thresholds=tuple(args.thresholds),
                   n_trajectories=args.trajectories, master_seed=args.seed,
                   worker_count=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    result = run_ensemble(plan, checkpoint=args.out / "checkpoint.jsonl", progress=print)
    rows = sweep_curve(result)
    write_summary_csv(args.out / "summary.csv", rows)
    for thr in plan.thresholds:
        line = "  ".join(f"k={r.k:g}: {r.summary.mean:.1f}" for r in rows if r.threshold == thr)
        print(f"F={thr:g}  {line}  -> optimum k={optimal_k(rows, thr):g}")


if __name__ == "__main__":
    main()
