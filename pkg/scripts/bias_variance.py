"""Bias^2, variance and noise terms of the prediction error over replicate datasets.

    python3 scripts/bias_variance.py --replicates 50 --csv bv.csv
"""

import argparse
import json

from udeuq.experiments import bias_variance_quadratic


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--replicates", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sigma", type=float, default=0.05)
    ap.add_argument("--adam-epochs", type=int, default=300)
    ap.add_argument("--qn-iters", type=int, default=100)
    ap.add_argument("--csv", help="per-time table")
    a = ap.parse_args()
    table = bias_variance_quadratic(a.replicates, a.seed, a.sigma, adam_epochs=a.adam_epochs, qn_max_iters=a.qn_iters)
    if a.csv:
        table.to_csv(a.csv)
    print(json.dumps(table.totals(), indent=2))


if __name__ == "__main__":
    main()
