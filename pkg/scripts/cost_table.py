"""Exact sampler-call counts next to the (3M)^n bound and the epsilon budget."""
import argparse

from mlfp.theory import TheoryConstants, complexity_budget, cost_bound, cost_recursion, n_for_eps


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--M", type=int, default=4)
    ap.add_argument("--cw-l", type=float, default=0.1)
    ap.add_argument("--actions", type=int, default=2)
    ap.add_argument("--kappa", type=float, default=1.0)
    args = ap.parse_args()
    print(f"{'n':>3} {'C_n':>22} {'(3M)^n':>22}")
    for n in range(13):
        print(f"{n:>3} {cost_recursion(n, args.M, 1):>22} {cost_bound(n, args.M, 1):>22}")
    tc = TheoryConstants.from_params(args.cw_l, args.actions, args.M, args.kappa)
    print(f"\nalpha={tc.alpha:.6f} beta={tc.beta:.4f} gamma={tc.gamma:.4f}")
    for eps in (1.0, 0.5, 0.25, 0.1, 0.01):
        n = n_for_eps(eps, tc)
        print(f"eps={eps:<5} N={n:>3} C_N={cost_recursion(n, args.M, 1):.4e} budget={complexity_budget(eps, tc):.4e}")


if __name__ == "__main__":
    main()
