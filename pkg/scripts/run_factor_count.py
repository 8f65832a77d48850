"""Mean estimated number of factors for the six selectors.

Example::

    python scripts/run_factor_count.py --reps 100 --nbar 120 --tbar 24 48 --psi 0 0.4 --patterns 2
"""

import argparse
import logging
from pathlib import Path

from ifepanel.simulation import ESTIMATORS, DgpConfig, StudyOptions, run_study, table_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--nbar", type=int, nargs="+", default=[120])
    ap.add_argument("--tbar", type=int, nargs="+", default=[24])
    ap.add_argument("--psi", type=float, nargs="+", default=[0.0])
    ap.add_argument("--patterns", nargs="+", default=["1"])
    ap.add_argument("--config", default="i")
    ap.add_argument("--rbar", type=int, default=None, help="upper bound; default rule of thumb")
    ap.add_argument("--permutations", type=int, default=199)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/factor_count")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    opts = StudyOptions(rbar=args.rbar, pa_permutations=args.permutations, workers=args.workers)
    results = []
    for nbar in args.nbar:
        for tbar in args.tbar:
            for psi in args.psi:
                for pattern in args.patterns:
                    cfg = DgpConfig(nbar, tbar, psi, pattern, args.config, seed=args.seed)
                    m = run_study(cfg, args.reps, opts)
                    logging.info("%s  %s", cfg, "  ".join(f"{k} {m.mean_r_hat[k]:.2f}" for k in ESTIMATORS))
                    results.append((cfg, m))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.csv").write_text(table_csv(results))
    print(table_csv(results))


if __name__ == "__main__":
    main()
