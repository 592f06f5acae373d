"""Replication spread of the level-l telescoping summand on chain_finite.

The summand max_b Q_l(X, b) - max_b Q_{l-1}(X, b) should shrink as l grows,
because both estimates approach Q.
"""
import argparse

from mlfp.harness import ExperimentConfig, variance_decay_probe

CHAIN = {"family": "chain_finite", "params": {"states": 5, "actions": 2, "seed": 1}, "discount": 0.1}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--levels", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--M", type=int, default=4)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()
    cfg = ExperimentConfig(CHAIN, args.M, 1, args.reps, args.seed, [0, 1, 2, 3, 4], block_size=250)
    for s in variance_decay_probe(cfg, args.levels):
        print(f"level {s.level}: sd {s.sd:.6g} (+/- {s.stderr:.2g})")


if __name__ == "__main__":
    main()
