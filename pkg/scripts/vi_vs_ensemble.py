"""Time-averaged 99% band widths of mean-field VI and a multistart ensemble on SEIR waves.

    python3 scripts/vi_vs_ensemble.py --m 100 --workers 4
"""

import argparse
import json
from dataclasses import asdict

from udeuq.experiments import vi_vs_ensemble_widths


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--m", type=int, default=100)
    ap.add_argument("--adam-epochs", type=int, default=1000)
    ap.add_argument("--qn-iters", type=int, default=200)
    ap.add_argument("--vi-steps", type=int, default=3000)
    ap.add_argument("--sigma", type=float, default=0.01)
    ap.add_argument("--log-link", action="store_true", help="unbounded exp link for the transmission rate")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=4)
    a = ap.parse_args()
    r = vi_vs_ensemble_widths(
        a.m, a.adam_epochs, a.qn_iters, a.vi_steps, sigma=a.sigma, seed=a.seed, parallelism=a.workers, beta_bounded=not a.log_link
    )
    print(json.dumps(asdict(r), indent=2))


if __name__ == "__main__":
    main()
