"""Run the chain_finite error-bound suite and check every row.

    python scripts/run_error_suite.py --out suite.csv [--reps 500] [--threads 4]
"""
import argparse
import sys

from mlfp.harness import ExperimentConfig, check_bounds, emit_csv, run_experiment, theory_constants_for
from mlfp.model import build_model

CHAIN = {"family": "chain_finite", "params": {"states": 5, "actions": 2, "seed": 1}, "discount": 0.1}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="suite.csv")
    ap.add_argument("--reps", type=int, default=500)
    ap.add_argument("--n-max", type=int, default=6)
    ap.add_argument("--M", type=int, default=4)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    cfg = ExperimentConfig(CHAIN, args.M, args.n_max, args.reps, args.seed, [0, 1, 2, 3, 4],
                           threads=args.threads)
    rows = run_experiment(cfg)
    emit_csv(rows, args.out)
    tc = theory_constants_for(build_model(CHAIN), args.M)
    result = check_bounds(rows, tc, cfg.slack)
    print(f"{'n':>2} {'rmse':>12} {'1.05*bound':>12} {'calls/run':>10} {'ms':>9}")
    for r, v in zip(rows, result.rows):
        print(f"{r.n:>2} {r.weighted_sup_rmse:12.6g} {cfg.slack * r.bound:12.6g} "
              f"{r.sampler_calls:>10} {r.wall_ms:9.1f}  {v.message}")
    print("all rows pass" if result.passed else "some rows FAIL")
    return 0 if result.passed else 2


if __name__ == "__main__":
    sys.exit(main())
