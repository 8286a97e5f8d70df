"""Marginal error and optimality gap of the Sinkhorn solver against the exact LP.

For each regularisation strength, solves random unit-mass problems with plain
sweeps and with the accelerated schedule, and reports how many sweeps reach
the tolerance and how far the transport cost sits above the LP optimum.

    python3 scripts/sinkhorn_convergence.py --trials 50
"""

import argparse
import sys

import numpy as np

from mcmot.fota import lp_oracle, make_problem, sinkhorn, transport_cost


def run(gammas, trials, size, seed, max_iters, tol):
    rows = []
    for gamma in gammas:
        rng = np.random.default_rng(seed)
        stats = {"plain": [], "accelerated": []}
        gaps = []
        for _ in range(trials):
            n, m = (int(v) for v in rng.integers(1, size + 1, 2))
            C = rng.uniform(0, 10, (n, m))
            pr = make_problem(C, epsilon=float(rng.uniform(2, 8)), gamma=gamma, max_iters=max_iters, tol=tol)
            if pr is None:
                continue
            for name, kw in (("plain", dict(anneal=False, newton=False)), ("accelerated", {})):
                plan = sinkhorn(pr, **kw)
                stats[name].append(plan.iterations_used if plan.converged else np.nan)
                if name == "accelerated":
                    _, exact = lp_oracle(pr)
                    gaps.append(transport_cost(pr, plan.plan) - exact)
        row = {"gamma": gamma}
        for name, its in stats.items():
            its = np.asarray(its, dtype=float)
            row[f"{name}_converged"] = float(np.mean(~np.isnan(its)))
            row[f"{name}_median_sweeps"] = float(np.nanmedian(its)) if np.any(~np.isnan(its)) else float("nan")
        row["mean_gap"] = float(np.mean(gaps))
        row["max_gap"] = float(np.max(gaps))
        rows.append(row)
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gammas", type=float, nargs="+", default=[1.0, 0.3, 0.1, 0.03, 0.01])
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--size", type=int, default=6, help="max rows/cols (the LP oracle caps at 8x8)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-iters", type=int, default=5000)
    ap.add_argument("--tol", type=float, default=1e-6)
    args = ap.parse_args(argv)
    rows = run(args.gammas, args.trials, args.size, args.seed, args.max_iters, args.tol)
    head = ["gamma", "plain conv", "plain sweeps", "accel conv", "accel sweeps", "mean gap", "max gap"]
    print("  ".join(f"{h:>12s}" for h in head))
    for r in rows:
        vals = [r["gamma"], r["plain_converged"], r["plain_median_sweeps"], r["accelerated_converged"],
                r["accelerated_median_sweeps"], r["mean_gap"], r["max_gap"]]
        print("  ".join(f"{v:12.4g}" for v in vals))
    return 0


if __name__ == "__main__":
    sys.exit(main())
