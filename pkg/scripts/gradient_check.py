"""Compare adjoint gradients of the negative log-likelihood with central differences.

    python3 scripts/gradient_check.py --points 10
"""

import argparse

import numpy as np

from udeuq.core import make_problem, make_space
from udeuq.likelihood import NoiseModel, UdeLikelihood, generate_dataset
from udeuq.solve import gradient_of

CASES = [
    ("quadratic", NoiseModel("gaussian", 0.05)),
    ("seir_waves", NoiseModel("gaussian", 0.05)),
    ("seir_pulse", NoiseModel("negbin", 2.2)),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--points", type=int, default=10)
    ap.add_argument("--scale", type=float, default=0.5, help="sd of the random raw parameter vectors")
    a = ap.parse_args()
    for scenario, noise in CASES:
        problem = make_problem(scenario, noise.kind)
        space = make_space(problem)
        lik = UdeLikelihood(problem, space, generate_dataset(scenario, noise, 0))
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(a.points):
            theta = rng.normal(0.0, a.scale, space.total_dim)
            g = gradient_of(lik, theta)
            for i in np.flatnonzero(np.abs(g) > 1e-8):
                h = 1e-4 * max(1.0, abs(theta[i]))
                e = np.zeros_like(theta)
                e[i] = h
                fd = (lik.negll(theta + e) - lik.negll(theta - e)) / (2 * h)
                worst = max(worst, abs(fd - g[i]) / abs(g[i]))
        print(f"{scenario:12s} {noise.kind:8s} worst relative error {worst:.2e}")


if __name__ == "__main__":
    main()
