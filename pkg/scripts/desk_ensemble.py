"""Multistart ensemble on the quadratic scenario at a reduced fitting budget.

    python3 scripts/desk_ensemble.py --m 100 --workers 4
"""

import argparse
import json
from dataclasses import asdict

from udeuq.experiments import desk_ensemble


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--m", type=int, default=100)
    ap.add_argument("--adam-epochs", type=int, default=1000)
    ap.add_argument("--qn-iters", type=int, default=200)
    ap.add_argument("--sigma", type=float, default=0.05)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=4)
    a = ap.parse_args()
    r = desk_ensemble(a.m, a.adam_epochs, a.qn_iters, a.sigma, a.data_seed, 0, a.workers)
    print(json.dumps({**asdict(r), "sigma_inside": r.sigma_inside}, indent=2))


if __name__ == "__main__":
    main()
