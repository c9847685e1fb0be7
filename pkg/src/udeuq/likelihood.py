"""Noise models, synthetic data, priors and the log-likelihood/posterior."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import special

from udeuq.core import (
    CATALOG,
    LOG_SENTINEL,
    is_log_sentinel,
    NEGLL_PENALTY,
    TRUE_MECH,
    ParamSpace,
    UdeProblem,
    compose_ude_rhs,
    is_penalty,
    make_problem,
    reference_rhs,
)
from udeuq.errors import ConfigError, ContractError, DataError, DomainError
from udeuq.solve import GENERATION_SOLVER, TRAINING_SOLVER, SolverConfig, integrate, simulate_with_adjoint

# Independent RNG streams derived from one integer seed.
STREAM_NOISE, STREAM_START, STREAM_SPLIT = 0, 1, 2


def rng_for(seed: int, stream: int) -> np.random.Generator:
    if seed < 0:
        raise ConfigError("seeds must be non-negative integers")
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))


@dataclass(frozen=True)
class NoiseModel:
    kind: str  # gaussian | negbin
    value: float  # sigma (gaussian) or dispersion d (negbin)

    def __post_init__(self):
        if self.kind == "gaussian":
            if not self.value > 0:
                raise ConfigError("gaussian sigma must be positive")
        elif self.kind == "negbin":
            if not self.value > 1:
                raise ConfigError("negative binomial dispersion must exceed 1")
        else:
            raise ConfigError(f"unknown noise kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        return cls(d["kind"], float(d["value"]))


# ---------------------------------------------------------------------------
# Noise-model likelihoods
# ---------------------------------------------------------------------------


def negll_gaussian(pred, obs, sigma: float) -> float:
    pred, obs = np.asarray(pred, dtype=float), np.asarray(obs, dtype=float)
    if pred.shape != obs.shape:
        raise ContractError(f"shape mismatch {pred.shape} vs {obs.shape}")
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    r = obs - pred
    return float(np.sum(0.5 * math.log(2 * math.pi * sigma**2) + r * r / (2 * sigma**2)))


def negbin_logpmf(k, mu, d):
    """log pmf with mean ``mu`` and variance ``d * mu``: size mu/(d-1), success prob 1/d."""
    k, mu = np.asarray(k, dtype=float), np.asarray(mu, dtype=float)
    r = mu / (d - 1.0)
    return special.gammaln(k + r) - special.gammaln(r) - special.gammaln(k + 1) - r * math.log(d) + k * math.log1p(-1.0 / d)


def negll_negbin(pred, obs, d: float) -> float:
    pred, obs = np.asarray(pred, dtype=float), np.asarray(obs, dtype=float)
    if pred.shape != obs.shape:
        raise ContractError(f"shape mismatch {pred.shape} vs {obs.shape}")
    if not d > 1:
        raise DomainError("dispersion d must exceed 1")
    if np.any(obs < 0) or np.any(obs != np.round(obs)):
        raise DomainError("negative binomial observations must be non-negative integers")
    if np.any(~(pred > 0)):
        return NEGLL_PENALTY
    return float(-np.sum(negbin_logpmf(obs, pred, d)))


def negbin_sample(rng: np.random.Generator, mu, d: float, size=None) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    return rng.negative_binomial(mu / (d - 1.0), 1.0 / d, size=size if size is not None else mu.shape)


def _gaussian_terms(pred, obs, w, log_sigma):
    """Weighted negLL, d/dpred and d/dlog_sigma."""
    s2 = float(np.exp(2 * log_sigma))
    r = obs - pred
    val = np.sum(w * (0.5 * math.log(2 * math.pi) + log_sigma + r * r / (2 * s2)))
    dpred = -w * r / s2
    dls = np.sum(w * (1.0 - r * r / s2))
    return float(val), dpred, float(dls)


def _negbin_terms(pred, obs, w, d):
    """Weighted negLL, d/dpred and d/dd."""
    r = pred / (d - 1.0)
    logp = negbin_logpmf(obs, pred, d)
    dlogp_dr = special.digamma(obs + r) - special.digamma(r) - math.log(d)
    dpred = -w * dlogp_dr / (d - 1.0)
    dd = -np.sum(w * (dlogp_dr * (-pred / (d - 1.0) ** 2) - r / d + obs * (1.0 / (d - 1.0) - 1.0 / d)))
    return float(-np.sum(w * logp)), dpred, float(dd)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    times: np.ndarray
    observations: np.ndarray  # (n_t, n_y)
    scenario: str
    seed: int
    noise: NoiseModel
    ground_truth: dict | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))
        if self.observations.shape[0] != self.times.size:
            raise ContractError("one observation row per time point is required")
        if np.any(np.diff(self.times) <= 0):
            raise ContractError("dataset times must be strictly increasing")

    @property
    def n_t(self) -> int:
        return self.times.size

    def subset(self, idx) -> "Dataset":
        idx = np.sort(np.asarray(idx, dtype=int))
        return replace(self, times=self.times[idx], observations=self.observations[idx])

    def metadata(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "noise": self.noise.to_dict(),
            "n_t": self.n_t,
            "ground_truth": self.ground_truth,
            **self.meta,
        }

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = ["t"] + [f"y{i + 1}" for i in range(self.observations.shape[1])]
        lines = [",".join(cols)]
        for t, row in zip(self.times, self.observations):
            lines.append(",".join(_fmt(v) for v in (t, *row)))
        path.write_text("\n".join(lines) + "\n")
        path.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        path = Path(path)
        if not path.exists():
            raise DataError(f"dataset file {path} does not exist")
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta_path = path.with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        extra = {k: v for k, v in meta.items() if k not in ("scenario", "seed", "noise", "n_t", "ground_truth")}
        noise = NoiseModel.from_dict(meta["noise"]) if "noise" in meta else NoiseModel("gaussian", 1.0)
        return cls(arr[:, 0], arr[:, 1:], meta.get("scenario", "custom"), int(meta.get("seed", 0)), noise, meta.get("ground_truth"), extra)


def _fmt(v: float) -> str:
    return repr(float(v)) if not float(v).is_integer() else str(int(v)) if abs(v) < 1e15 else repr(float(v))


def reference_trajectory(problem: UdeProblem, times, x0=None, solver: SolverConfig = GENERATION_SOLVER):
    """Noise-free states of the data-generating system at ``times``."""
    f, tstops = reference_rhs(problem)
    x0 = np.asarray(problem.x0 if x0 is None else x0, dtype=float)
    traj = integrate(f, x0, times, None, solver, t0=problem.t_span[0], tstops=tstops)
    if not traj.success:
        raise DataError(f"reference simulation failed: {traj.failure_reason}")
    return traj


def generate_dataset(
    scenario: str, noise: NoiseModel, seed: int, solver: SolverConfig = GENERATION_SOLVER
) -> Dataset:
    problem = make_problem(scenario, noise.kind)
    allowed = CATALOG[scenario]
    if noise.kind not in allowed:
        raise ConfigError(f"{scenario} does not support {noise.kind} noise")
    times = problem.obs_times()
    ref = reference_trajectory(problem, times, solver=solver)
    ybar = problem.observe(ref.states)
    rng = rng_for(seed, STREAM_NOISE)
    if noise.kind == "gaussian":
        obs = ybar + noise.value * rng.standard_normal(ybar.shape)
    else:
        obs = negbin_sample(rng, np.maximum(ybar, 1e-6), noise.value).astype(float)
    truth = dict(TRUE_MECH[scenario])
    truth["sigma" if noise.kind == "gaussian" else "d"] = noise.value
    ground_truth = {
        "params": truth,
        "x0": list(problem.x0),
        "states": ref.states.tolist(),
        "observables": ybar.tolist(),
    }
    return Dataset(
        times,
        obs,
        scenario,
        seed,
        noise,
        ground_truth,
        {"catalog": noise.value in allowed[noise.kind]},
    )


def split_indices(n: int, seed: int, val_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < val_fraction < 1:
        raise ConfigError("val_fraction must lie in (0, 1)")
    n_val = min(max(int(round(n * val_fraction)), 1), n - 1)
    val = np.sort(rng_for(seed, STREAM_SPLIT).choice(n, n_val, replace=False))
    train = np.setdiff1d(np.arange(n), val)
    return train, val


def train_val_split(data: Dataset, seed: int, val_fraction: float = 0.2) -> tuple[Dataset, Dataset]:
    train, val = split_indices(data.n_t, seed, val_fraction)
    return data.subset(train), data.subset(val)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


def log_prior(space: ParamSpace, theta_raw) -> float:
    """Sum of segment log densities, expressed on the raw scale.

    Natural-scale priors pick up the log-Jacobian of their transform so that
    every engine targets one density over the raw vector.
    """
    theta = space._check(theta_raw)
    total = 0.0
    for seg, sl in zip(space.segments, space.slices().values()):
        raw = theta[sl]
        if seg.prior.applies_on == "raw":
            lp = seg.prior.logpdf(raw)
        else:
            lp = seg.prior.logpdf(seg.transform.to_natural(raw))
            if not is_log_sentinel(lp):
                lp += float(np.sum(seg.transform.log_abs_det(raw)))
        if is_log_sentinel(lp):
            return LOG_SENTINEL
        total += lp
    return total


def grad_log_prior(space: ParamSpace, theta_raw) -> np.ndarray:
    theta = space._check(theta_raw)
    g = np.zeros_like(theta)
    for seg, sl in zip(space.segments, space.slices().values()):
        raw = theta[sl]
        if seg.prior.applies_on == "raw":
            g[sl] = seg.prior.grad_logpdf(raw)
        else:
            nat = seg.transform.to_natural(raw)
            g[sl] = seg.prior.grad_logpdf(nat) * seg.transform.derivative(raw) + seg.transform.grad_log_abs_det(raw)
    return g


# ---------------------------------------------------------------------------
# Likelihood over a dataset
# ---------------------------------------------------------------------------


class UdeLikelihood:
    """Negative log-likelihood of a UDE on a dataset, with exact gradients.

    ``weights`` (one per observation row) restrict the sum to a subset, which
    is how train/validation splits share a single forward solve.
    """

    def __init__(self, problem: UdeProblem, space: ParamSpace, data: Dataset, solver: SolverConfig = TRAINING_SOLVER):
        if data.observations.shape[1] != problem.n_y:
            raise ContractError(f"dataset has {data.observations.shape[1]} columns, problem observes {problem.n_y}")
        if problem.noise_kind != data.noise.kind:
            raise ContractError("problem and dataset disagree on the noise model")
        self.problem, self.space, self.data, self.solver = problem, space, data, solver
        self.field = compose_ude_rhs(problem, space)
        self._noise_seg = space.by_role("noise")[0]
        self._noise_sl = space.slices()[self._noise_seg.name]

    def noise_value(self, theta_raw) -> float:
        """sigma for gaussian noise, dispersion d for negbin."""
        nat = float(self._noise_seg.transform.to_natural(np.asarray(theta_raw)[self._noise_sl])[0])
        return nat if self.problem.noise_kind == "gaussian" else 1.0 / nat

    def predict(self, theta_raw):
        return simulate_with_adjoint(self.field, theta_raw, self.data.times, self.solver)[0]

    def _eval(self, theta_raw, weight_sets, need_grad: bool):
        theta = np.asarray(theta_raw, dtype=float)
        traj, vjp = simulate_with_adjoint(self.field, theta, self.data.times, self.solver)
        n = len(weight_sets)
        if not traj.success:
            return [NEGLL_PENALTY] * n, [np.zeros_like(theta)] * n if need_grad else None
        pred = self.problem.observe(traj.states)
        obs = self.data.observations
        raw_noise = float(theta[self._noise_sl][0])
        values, grads = [], []
        for w in weight_sets:
            with np.errstate(all="ignore"):
                val, g = self._terms(theta, traj, vjp, pred, obs, raw_noise, w, need_grad)
            values.append(val)
            grads.append(g)
        return values, (grads if need_grad else None)

    def _terms(self, theta, traj, vjp, pred, obs, raw_noise, w, need_grad):
        fail = (NEGLL_PENALTY, np.zeros_like(theta) if need_grad else None)
        w2 = np.broadcast_to(np.asarray(w, dtype=float)[:, None], obs.shape)
        if self.problem.noise_kind == "gaussian":
            val, dpred, dnoise = _gaussian_terms(pred, obs, w2, raw_noise)
        else:
            if np.any(~(pred > 0)):
                return fail
            p = float(self._noise_seg.transform.to_natural(raw_noise))
            d = 1.0 / p
            val, dpred, dd = _negbin_terms(pred, obs, w2, d)
            dnoise = dd * (-1.0 / p**2) * float(self._noise_seg.transform.derivative(raw_noise))
        if not math.isfinite(val):
            return fail
        if not need_grad:
            return val, None
        seed = np.zeros_like(traj.states)
        seed[:, list(self.problem.observed)] = dpred
        g = vjp(seed)
        g[self._noise_sl] += dnoise
        if not np.all(np.isfinite(g)):
            return fail
        return val, g

    def negll(self, theta_raw, weights=None) -> float:
        w = np.ones(self.data.n_t) if weights is None else weights
        return self._eval(theta_raw, [w], False)[0][0]

    def negll_and_grad(self, theta_raw, weights=None):
        w = np.ones(self.data.n_t) if weights is None else weights
        vals, grads = self._eval(theta_raw, [w], True)
        return vals[0], grads[0]

    value_and_grad = negll_and_grad

    def split_eval(self, theta_raw, train_weights, val_weights):
        """(train negLL, train gradient, validation negLL) from one solve."""
        vals, grads = self._eval(theta_raw, [train_weights, val_weights], True)
        return vals[0], grads[0], vals[1]

    def log_posterior(self, theta_raw) -> float:
        lp = log_prior(self.space, theta_raw)
        if is_log_sentinel(lp):
            return LOG_SENTINEL
        nll = self.negll(theta_raw)
        if is_penalty(nll):
            return LOG_SENTINEL
        return lp - nll

    def log_posterior_and_grad(self, theta_raw):
        theta = np.asarray(theta_raw, dtype=float)
        lp = log_prior(self.space, theta)
        if is_log_sentinel(lp):
            return LOG_SENTINEL, np.zeros_like(theta)
        nll, g = self.negll_and_grad(theta)
        if is_penalty(nll):
            return LOG_SENTINEL, np.zeros_like(theta)
        return lp - nll, grad_log_prior(self.space, theta) - g


def log_posterior(problem: UdeProblem, space: ParamSpace, data: Dataset, theta_raw, solver: SolverConfig = TRAINING_SOLVER) -> float:
    return UdeLikelihood(problem, space, data, solver).log_posterior(theta_raw)


def ground_truth_theta(problem: UdeProblem, space: ParamSpace, data: Dataset) -> np.ndarray | None:
    """Raw vector with the generating mechanistic/noise values and a zero network.

    Only the non-network entries are meaningful; the generator has no network.
    """
    if not data.ground_truth:
        return None
    params = data.ground_truth["params"]
    theta = np.zeros(space.total_dim)
    sl = space.slices()
    for seg in space.segments:
        if seg.role == "mech" and seg.name in params:
            theta[sl[seg.name]] = seg.transform.to_raw([params[seg.name]])
        elif seg.role == "noise":
            val = params.get("sigma") if seg.name == "sigma" else 1.0 / params["d"]
            theta[sl[seg.name]] = seg.transform.to_raw([val])
    return theta
