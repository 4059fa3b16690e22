"""Projective-measurement protocol with a greedy schedule: Monte Carlo and exact mean."""

import argparse
import math

import numpy as np

from dualchain.cli import BASELINE_CELL
from dualchain.ensemble import derive_seed
from dualchain.model import ChainConfig, build_effective_model
from dualchain.protocol import baseline_expectation, greedy_schedule, run_projective_baseline


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--floors", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.3, 0.5])
    p.add_argument("--trajectories", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    cfg = ChainConfig(n_sites=args.n, meas_strength=0.0)
    model = build_effective_model(cfg)
    print("floor  rounds  exact_mean  mc_mean  mc_se  success")
    for floor in args.floors:
        sched = greedy_schedule(model, cfg, floor)
        if not sched.times:
            print(f"{floor:5.2f}  empty schedule")
            continue
        _, exact, success = baseline_expectation(model, sched)
        t = np.array([o.arrival_time for o in (
            run_projective_baseline(cfg, model, sched, derive_seed(args.seed, BASELINE_CELL, i))
            for i in range(args.trajectories)) if o.arrival_time is not None])
        print(f"{floor:5.2f}  {len(sched.times):6d}  {exact:10.2f}  {t.mean():7.2f}  "
              f"{t.std(ddof=1) / math.sqrt(len(t)):5.2f}  {success:.4f}")


if __name__ == "__main__":
    main()
