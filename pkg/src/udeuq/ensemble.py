"""Multistart ensembles and likelihood-ratio member selection."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from pathlib import Path

import numpy as np
from scipy import optimize as spopt
from scipy import special

from udeuq.core import MlpSpec, ParamSpace, UdeProblem, is_penalty
from udeuq.errors import ConfigError, EmptyEnsembleError
from udeuq.likelihood import Dataset
from udeuq.optimize import FitConfig, FitResult, fit_single, sample_start_point
from udeuq.solve import TRAINING_SOLVER, SolverConfig


def sample_start_points(
    space: ParamSpace, m: int, seed: int, net_init: str = "glorot_uniform", mlp: MlpSpec | None = None
) -> list[np.ndarray]:
    """Member ``i`` draws its start from seed ``seed + i``."""
    if m < 1:
        raise ConfigError("m must be at least 1")
    return [sample_start_point(space, seed + i, net_init, mlp) for i in range(m)]


def _fit_member(args, problem, space, data, solver):
    cfg, theta0 = args
    return fit_single(problem, space, data, cfg, theta0, solver)


def run_multistart(
    problem: UdeProblem,
    space: ParamSpace,
    data: Dataset,
    m: int,
    cfg: FitConfig,
    parallelism: int = 1,
    net_init: str = "glorot_uniform",
    solver: SolverConfig = TRAINING_SOLVER,
) -> list[FitResult]:
    """``m`` independent fits; member ``i`` uses seed ``cfg.seed + i`` for its start and split."""
    if parallelism < 1:
        raise ConfigError("parallelism must be at least 1")
    starts = sample_start_points(space, m, cfg.seed, net_init, problem.mlp)
    jobs = [(replace(cfg, seed=cfg.seed + i), starts[i]) for i in range(m)]
    work = partial(_fit_member, problem=problem, space=space, data=data, solver=solver)
    if parallelism == 1 or m == 1:
        return [work(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(parallelism, m)) as pool:
        return list(pool.map(work, jobs))


def chi2_quantile(alpha: float, df: float) -> float:
    """Upper ``alpha`` critical value of chi-square, by inverting the regularized lower gamma."""
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    if not df >= 1:
        raise ConfigError("df must be at least 1")
    target = 1.0 - alpha
    cdf = lambda x: special.gammainc(0.5 * df, 0.5 * x) - target
    hi = max(2.0 * df, 1.0)
    while cdf(hi) < 0:
        hi *= 2.0
    if cdf(0.0) >= 0:
        return 0.0
    return float(spopt.brentq(cdf, 0.0, hi, xtol=1e-12, rtol=1e-14))


@dataclass
class Ensemble:
    fits: list[FitResult]
    mle_index: int
    threshold: float
    accepted: np.ndarray  # bool mask over fits
    alpha: float
    df: float

    @property
    def negll_full(self) -> np.ndarray:
        return np.array([np.inf if is_penalty(f.negll_full) else f.negll_full for f in self.fits])

    @property
    def lambdas(self) -> np.ndarray:
        return 2.0 * (self.negll_full - self.negll_full[self.mle_index])

    @property
    def accepted_indices(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.accepted)]

    @property
    def mle(self) -> FitResult:
        return self.fits[self.mle_index]

    def accepted_thetas(self) -> np.ndarray:
        return np.array([self.fits[i].theta_best_raw for i in self.accepted_indices])


def select_members(fits: list[FitResult], alpha: float = 0.05, df: float = 1) -> Ensemble:
    """Accept fits whose likelihood-ratio statistic against the best fit is below the chi-square threshold."""
    if not fits:
        raise EmptyEnsembleError("no fits to select from")
    nll = np.array([np.inf if is_penalty(f.negll_full) else f.negll_full for f in fits])
    if not np.any(np.isfinite(nll)):
        raise EmptyEnsembleError("every fit failed; no finite negative log-likelihood")
    mle = int(np.argmin(nll))
    thr = chi2_quantile(alpha, df)
    lam = 2.0 * (nll - nll[mle])
    accepted = lam <= thr
    return Ensemble(list(fits), mle, thr, accepted, alpha, df)


def waterfall(fits: list[FitResult]) -> list[tuple[int, float]]:
    """(rank, negLL minus best) for every fit with a finite value, best first."""
    nll = sorted(f.negll_full for f in fits if not is_penalty(f.negll_full))
    if not nll:
        return []
    return [(i + 1, v - nll[0]) for i, v in enumerate(nll)]


def write_waterfall(path, fits: list[FitResult]) -> None:
    rows = ["rank,delta_negll"] + [f"{r},{d!r}" for r, d in waterfall(fits)]
    Path(path).write_text("\n".join(rows) + "\n")


def save_ensemble(directory, ens: Ensemble) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "members.jsonl").write_text("".join(f.to_json() + "\n" for f in ens.fits))
    meta = {
        "threshold": ens.threshold,
        "alpha": ens.alpha,
        "df": ens.df,
        "mle_index": ens.mle_index,
        "accepted": ens.accepted_indices,
        "n_members": len(ens.fits),
    }
    (d / "ensemble.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    write_waterfall(d / "waterfall.csv", ens.fits)


def load_ensemble(directory) -> Ensemble:
    d = Path(directory)
    fits = [FitResult.from_json(line) for line in (d / "members.jsonl").read_text().splitlines() if line.strip()]
    meta = json.loads((d / "ensemble.json").read_text())
    accepted = np.zeros(len(fits), dtype=bool)
    accepted[meta["accepted"]] = True
    return Ensemble(fits, meta["mle_index"], meta["threshold"], accepted, meta["alpha"], meta["df"])
