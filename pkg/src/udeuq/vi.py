"""Mean-field Gaussian variational inference on the raw parameter scale."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from udeuq.core import LOG_SENTINEL, is_log_sentinel
from udeuq.errors import ConfigError, ContractError
from udeuq.mcmc import _as_value_and_grad
from udeuq.posterior import PosteriorSamples

_HALF_LOG_2PI_E = 0.5 * math.log(2 * math.pi * math.e)


@dataclass
class MeanFieldPosterior:
    mu: np.ndarray
    log_sigma: np.ndarray
    elbo_trace: list[float] = field(default_factory=list)
    names: list[str] | None = None

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.log_sigma = np.asarray(self.log_sigma, dtype=float)
        if self.mu.shape != self.log_sigma.shape or self.mu.ndim != 1:
            raise ContractError("mu and log_sigma must be vectors of equal length")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    def entropy(self) -> float:
        return float(np.sum(self.log_sigma) + self.mu.size * _HALF_LOG_2PI_E)

    def to_dict(self) -> dict:
        names = self.names or [f"theta.{i}" for i in range(self.mu.size)]
        return {
            "dimensions": [
                {"name": n, "mu": float(m), "log_sigma": float(s)} for n, m, s in zip(names, self.mu, self.log_sigma)
            ],
            "final_elbo": float(self.elbo_trace[-1]) if self.elbo_trace else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MeanFieldPosterior":
        dims = d["dimensions"]
        return cls([x["mu"] for x in dims], [x["log_sigma"] for x in dims], [], [x["name"] for x in dims])

    def save(self, json_path, elbo_csv_path=None) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        if elbo_csv_path is not None:
            rows = ["step,elbo"] + [f"{i},{v!r}" for i, v in enumerate(self.elbo_trace)]
            Path(elbo_csv_path).write_text("\n".join(rows) + "\n")


def _safe_eval(f: Callable, theta: np.ndarray) -> tuple[float, np.ndarray]:
    lp, g = f(theta)
    lp = float(lp)
    g = np.asarray(g, dtype=float)
    if is_log_sentinel(lp) or not np.all(np.isfinite(g)):
        return LOG_SENTINEL, np.zeros_like(theta)
    return lp, g


def elbo_estimate(log_post: Callable, q: MeanFieldPosterior, n_mc: int, seed: int) -> float:
    """Reparameterized Monte Carlo ELBO; sentinel log densities enter the average as is."""
    if n_mc < 1:
        raise ConfigError("n_mc must be at least 1")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n_mc, q.mu.size))
    vals = []
    for e in eps:
        lp = float(log_post(q.mu + q.sigma * e))
        vals.append(lp if math.isfinite(lp) else LOG_SENTINEL)
    return float(np.mean(vals)) + q.entropy()


def vi_fit(
    log_post: Callable,
    grad: Callable | None,
    init,
    steps: int,
    n_mc: int = 5,
    lr: float = 1e-2,
    seed: int = 0,
    init_log_sigma: float = -2.0,
    names: list[str] | None = None,
    average_tail: float = 0.2,
) -> MeanFieldPosterior:
    """Stochastic ELBO ascent with ADAM on (mu, log sigma).

    ``grad=None`` means ``log_post`` returns ``(value, gradient)``.  The
    recorded trace holds the per-step ELBO estimate at the pre-update iterate.
    The returned parameters average the last ``average_tail`` fraction of
    iterates, which removes most of the stationary ADAM jitter; 0 returns the
    final iterate.
    """
    if not 0 <= average_tail < 1:
        raise ConfigError("average_tail must lie in [0, 1)")
    if steps < 0:
        raise ConfigError("steps must be non-negative")
    if n_mc < 1:
        raise ConfigError("n_mc must be at least 1")
    f = _as_value_and_grad(log_post, grad)
    mu = np.array(init, dtype=float)
    ls = np.full_like(mu, init_log_sigma)
    d = mu.size
    rng = np.random.default_rng(seed)
    m = np.zeros(2 * d)
    v = np.zeros(2 * d)
    b1, b2, adam_eps = 0.9, 0.999, 1e-8
    trace = []
    n_avg = int(average_tail * steps)
    sum_mu = np.zeros(d)
    sum_ls = np.zeros(d)
    n_upd = 0
    for k in range(1, steps + 1):
        sigma = np.exp(ls)
        eps = rng.standard_normal((n_mc, d))
        g_mu = np.zeros(d)
        g_ls = np.zeros(d)
        lps = np.empty(n_mc)
        n_ok = 0
        for j in range(n_mc):
            lp, g = _safe_eval(f, mu + sigma * eps[j])
            lps[j] = lp
            if lp != LOG_SENTINEL:
                n_ok += 1
                g_mu += g
                g_ls += g * sigma * eps[j]
        trace.append(float(lps.mean()) + float(np.sum(ls)) + d * _HALF_LOG_2PI_E)
        # Failed draws carry no gradient.  Averaging over all n_mc would scale
        # the prior and likelihood pull down against the full entropy push and
        # inflate sigma; average over the usable draws and skip if there are none.
        if n_ok > 0:
            g_mu /= n_ok
            g_ls = g_ls / n_ok + 1.0  # entropy gradient
            grad_vec = np.concatenate([g_mu, g_ls])
            n_upd += 1
            m = b1 * m + (1 - b1) * grad_vec
            v = b2 * v + (1 - b2) * grad_vec * grad_vec
            step = lr * (m / (1 - b1**n_upd)) / (np.sqrt(v / (1 - b2**n_upd)) + adam_eps)
            mu = mu + step[:d]
            ls = ls + step[d:]
        if k > steps - n_avg:
            sum_mu += mu
            sum_ls += ls
    if n_avg > 0:
        mu, ls = sum_mu / n_avg, sum_ls / n_avg
    return MeanFieldPosterior(mu, ls, trace, names)


def vi_sample(q: MeanFieldPosterior, n: int, seed: int) -> PosteriorSamples:
    if n < 1:
        raise ConfigError("n must be at least 1")
    rng = np.random.default_rng(seed)
    return PosteriorSamples(q.mu + q.sigma * rng.standard_normal((n, q.mu.size)), "vi")


def kl_to_gaussian(q: MeanFieldPosterior, mean, cov) -> float:
    """Closed-form KL(q || N(mean, cov))."""
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = mean.size
    sq = np.diag(q.sigma**2)
    inv = np.linalg.inv(cov)
    diff = mean - q.mu
    _, logdet_p = np.linalg.slogdet(cov)
    logdet_q = float(np.sum(2 * q.log_sigma))
    return float(0.5 * (np.trace(inv @ sq) + diff @ inv @ diff - d + logdet_p - logdet_q))
