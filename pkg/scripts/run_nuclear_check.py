"""Compare post nuclear-norm estimates with the iterative fit on simulated panels.

Example::

    python scripts/run_nuclear_check.py --reps 20 --n 60 --t 60
"""

import argparse

import numpy as np

from ifepanel.estimator import IfeOptions, fit
from ifepanel.nuclear import fit_nuclear, post_estimate
from ifepanel.simulation import DgpConfig, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--n", type=int, default=60)
    ap.add_argument("--t", type=int, default=60)
    ap.add_argument("--psi", type=float, default=0.0)
    ap.add_argument("--iters", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rows = []
    for rep in range(args.reps):
        d, _ = generate(DgpConfig(args.n, args.t, args.psi, seed=args.seed), rep)
        nn = fit_nuclear(d)
        post = post_estimate(nn, d, 2, args.iters)
        ife = fit(d, IfeOptions(r=2))
        rows.append((nn.beta_star[0], post.beta[0], ife.beta[0]))
        print(f"{rep:4d}  nn {rows[-1][0]:.5f}  post {rows[-1][1]:.5f}  ife {rows[-1][2]:.5f}")
    arr = np.array(rows)
    print(f"mean |post - ife| = {np.abs(arr[:, 1] - arr[:, 2]).mean():.2e}, "
          f"max = {np.abs(arr[:, 1] - arr[:, 2]).max():.2e}")


if __name__ == "__main__":
    main()
