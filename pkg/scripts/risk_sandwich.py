"""Monte Carlo check of the prediction-risk sandwich across penalties."""

import argparse

import numpy as np

from jointsparse.theory import thm41_bound_report, thm41_example


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--sigma2", type=float, default=0.25)
    p.add_argument("--trials", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    X, hat, bar = thm41_example(args.d)
    print(f"{'lam':>6} {'lower':>9} {'excess':>9} {'upper':>9} {'3 se':>8}  ok")
    for lam in args.sigma2 * np.array([1.0, 1.5, 2.0, 4.0]):
        r = thm41_bound_report(X, hat, bar, lam, args.sigma2, args.trials, args.seed)
        print(f"{lam:6.3f} {r.lower:9.5f} {r.excess:9.5f} {r.upper:9.5f} {3 * r.mc_stderr:8.5f}  {r.sandwich_ok}")


if __name__ == "__main__":
    main()
