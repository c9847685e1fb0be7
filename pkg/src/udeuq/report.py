"""Prediction bands, parameter summaries, bias-variance diagnostics and plain-text outputs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from udeuq.core import ParamSpace, UdeProblem, compose_ude_rhs, make_problem, make_space, true_beta
from udeuq.errors import ConfigError, ContractError, ReportError
from udeuq.likelihood import NoiseModel, generate_dataset, negbin_sample, reference_trajectory, rng_for
from udeuq.posterior import PosteriorSamples
from udeuq.solve import TRAINING_SOLVER, SolverConfig, simulate

DEFAULT_LEVELS = (0.5, 0.8, 0.99)
CONSERVATION_TOL = 1e-6


def dense_grid(problem: UdeProblem, n: int = 200) -> np.ndarray:
    return np.linspace(problem.t_span[0], problem.t_span[1], n)


def quantile7(x: np.ndarray, q, axis: int = 0) -> np.ndarray:
    """Linear interpolation of order statistics (Hyndman-Fan type 7)."""
    return np.quantile(x, q, axis=axis, method="linear")


@dataclass
class PredictionBand:
    times: np.ndarray
    series: list[str]
    levels: tuple[float, ...]
    lower: np.ndarray  # (n_levels, n_t, n_series)
    median: np.ndarray  # (n_t, n_series)
    upper: np.ndarray
    kind: str  # epistemic_only | full_predictive
    env_min: np.ndarray | None = None
    env_max: np.ndarray | None = None
    failed_draws: list[int] = field(default_factory=list)
    conservation_error: float | None = None

    def level_index(self, level: float) -> int:
        for i, lv in enumerate(self.levels):
            if math.isclose(lv, level):
                return i
        raise ContractError(f"level {level} not in band")

    def width(self, level: float) -> np.ndarray:
        i = self.level_index(level)
        return self.upper[i] - self.lower[i]

    def to_csv(self, path) -> None:
        rows = ["t,state,level,lower,median,upper,kind"]
        for li, lv in enumerate(self.levels):
            for si, name in enumerate(self.series):
                for ti, t in enumerate(self.times):
                    rows.append(
                        f"{t!r},{name},{lv!r},{self.lower[li, ti, si]!r},{self.median[ti, si]!r},{self.upper[li, ti, si]!r},{self.kind}"
                    )
        if self.env_min is not None:
            for si, name in enumerate(self.series):
                for ti, t in enumerate(self.times):
                    rows.append(
                        f"{t!r},{name},envelope,{self.env_min[ti, si]!r},{self.median[ti, si]!r},{self.env_max[ti, si]!r},{self.kind}"
                    )
        Path(path).write_text("\n".join(rows) + "\n")


def _band_from_values(values: np.ndarray, times, series, levels, kind, **extra) -> PredictionBand:
    """``values`` has shape (n_samples, n_t, n_series)."""
    lo = np.array([quantile7(values, (1 - lv) / 2) for lv in levels])
    hi = np.array([quantile7(values, (1 + lv) / 2) for lv in levels])
    med = quantile7(values, 0.5)
    return PredictionBand(
        np.asarray(times, float), list(series), tuple(levels), lo, med, hi, kind, values.min(axis=0), values.max(axis=0), **extra
    )


def _check_levels(levels) -> tuple[float, ...]:
    levels = tuple(float(v) for v in levels)
    if not levels or any(not 0 < v < 1 for v in levels):
        raise ConfigError("levels must lie in (0, 1)")
    return levels


def simulate_draws(
    samples: PosteriorSamples,
    problem: UdeProblem,
    space: ParamSpace,
    grid,
    x0=None,
    solver: SolverConfig = TRAINING_SOLVER,
) -> tuple[np.ndarray, list[int], float | None]:
    """States of every draw on ``grid``: (n_ok, n_t, n_x), failed indices, worst SEIR mass drift."""
    fld = compose_ude_rhs(problem, space)
    x0v = np.asarray(problem.x0 if x0 is None else x0, dtype=float)
    if x0v.shape != (problem.n_x,):
        raise ContractError(f"initial state must have {problem.n_x} entries")
    ok, failed = [], []
    for i, th in enumerate(samples.draws):
        tr = simulate(fld, th, grid, solver, x0v)
        (ok if tr.success else failed).append(tr.states if tr.success else i)
    if not ok:
        raise ReportError(f"every simulation failed; draws {failed}")
    states = np.array(ok)
    drift = None
    if problem.is_seir:
        total = float(np.sum(x0v))
        drift = float(np.max(np.abs(states.sum(axis=2) - total)) / total)
    return states, failed, drift


def trajectory_bands(
    samples: PosteriorSamples,
    problem: UdeProblem,
    space: ParamSpace,
    grid=None,
    levels=DEFAULT_LEVELS,
    kind: str = "epistemic_only",
    noise_draws: int = 0,
    seed: int = 0,
    x0=None,
    solver: SolverConfig = TRAINING_SOLVER,
) -> PredictionBand:
    """Quantile bands across posterior draws.

    ``epistemic_only`` bands cover every state.  ``full_predictive`` bands
    cover the observables and mix each draw's noise model into the spread:
    Gaussian noise by ``noise_draws`` realisations per draw, negative binomial
    noise through the exact mixture CDF over draws.
    """
    levels = _check_levels(levels)
    grid = dense_grid(problem) if grid is None else np.asarray(grid, float)
    if samples.n_draws < 1:
        raise ContractError("at least one draw is required")
    states, failed, drift = simulate_draws(samples, problem, space, grid, x0, solver)
    if drift is not None and drift > CONSERVATION_TOL:
        raise ReportError(f"SEIR mass drift {drift:.3e} exceeds {CONSERVATION_TOL}")
    extra = {"failed_draws": failed, "conservation_error": drift}
    if kind == "epistemic_only":
        return _band_from_values(states, grid, problem.state_names, levels, kind, **extra)
    if kind != "full_predictive":
        raise ConfigError(f"unknown band kind {kind!r}")
    obs_names = [problem.state_names[i] for i in problem.observed]
    means = states[:, :, list(problem.observed)]
    good = [i for i in range(samples.n_draws) if i not in set(failed)]
    noise_seg = space.by_role("noise")[0]
    noise_sl = space.slices()[noise_seg.name]
    nat = np.array([float(noise_seg.transform.to_natural(samples.draws[i, noise_sl])[0]) for i in good])
    rng = rng_for(seed, 0)
    if problem.noise_kind == "gaussian":
        if noise_draws < 1:
            raise ConfigError("gaussian full-predictive bands need noise_draws >= 1")
        eps = rng.standard_normal((means.shape[0], noise_draws) + means.shape[1:])
        values = (means[:, None] + nat[:, None, None, None] * eps).reshape((-1,) + means.shape[1:])
        return _band_from_values(values, grid, obs_names, levels, kind, **extra)
    return _negbin_mixture_band(means, 1.0 / nat, grid, obs_names, levels, extra)


def _negbin_mixture_band(means, d, grid, names, levels, extra) -> PredictionBand:
    """Integer quantiles of the equal-weight mixture of per-draw negative binomials."""
    mu = np.maximum(means, 1e-6)
    r = mu / (d[:, None, None] - 1.0)
    p = np.broadcast_to((1.0 / d)[:, None, None], mu.shape)
    probs = sorted({0.5} | {(1 - lv) / 2 for lv in levels} | {(1 + lv) / 2 for lv in levels})
    q = {}
    n_t, n_s = mu.shape[1], mu.shape[2]
    for pr in probs:
        out = np.empty((n_t, n_s))
        per_draw = stats.nbinom.ppf(pr, r, p)  # mixture quantile lies between per-draw extremes
        for ti in range(n_t):
            for si in range(n_s):
                lo, hi = int(per_draw[:, ti, si].min()), int(per_draw[:, ti, si].max())
                ks = np.arange(lo, hi + 1)
                cdf = stats.nbinom.cdf(ks[None, :], r[:, ti, si][:, None], p[:, ti, si][:, None]).mean(axis=0)
                out[ti, si] = ks[np.argmax(cdf >= pr - 1e-12)] if np.any(cdf >= pr - 1e-12) else hi
        q[pr] = out
    lo = np.array([q[(1 - lv) / 2] for lv in levels])
    hi = np.array([q[(1 + lv) / 2] for lv in levels])
    low_env = stats.nbinom.ppf(0.0005, r, p).min(axis=0)
    high_env = stats.nbinom.ppf(0.9995, r, p).max(axis=0)
    return PredictionBand(np.asarray(grid, float), names, tuple(levels), lo, q[0.5], hi, "full_predictive", low_env, high_env, **extra)


def predict_new_ic(samples, problem, space, x0_new, grid=None, levels=DEFAULT_LEVELS, solver=TRAINING_SOLVER) -> PredictionBand:
    return trajectory_bands(samples, problem, space, grid, levels, "epistemic_only", 0, 0, x0_new, solver)


def beta_bands(samples: PosteriorSamples, problem: UdeProblem, space: ParamSpace, grid=None, levels=DEFAULT_LEVELS) -> PredictionBand:
    if not problem.is_seir:
        raise ConfigError("transmission-rate bands need a problem with a time-driven network")
    levels = _check_levels(levels)
    grid = dense_grid(problem) if grid is None else np.asarray(grid, float)
    fld = compose_ude_rhs(problem, space)
    vals = np.array([np.asarray(fld.beta(grid, th), float).reshape(-1) for th in samples.draws])
    return _band_from_values(vals[:, :, None], grid, ["beta"], levels, "epistemic_only")


def reference_bands(problem: UdeProblem, grid, x0=None) -> np.ndarray:
    """Noise-free generator states on ``grid`` (for dashed reference lines)."""
    grid = np.asarray(grid, float)
    if grid[0] == problem.t_span[0]:
        tr = reference_trajectory(problem, grid[1:], x0)
        x0v = np.asarray(problem.x0 if x0 is None else x0, float)
        return np.vstack([x0v, tr.states])
    return reference_trajectory(problem, grid, x0).states


def reference_beta(problem: UdeProblem, grid) -> np.ndarray:
    f = true_beta(problem)
    return np.array([f(t) for t in np.asarray(grid, float)])


# ---------------------------------------------------------------------------
# Parameter posteriors
# ---------------------------------------------------------------------------


def parameter_posteriors(samples: PosteriorSamples, space: ParamSpace, ground_truth: dict | None = None, bins: int = 64) -> list[dict]:
    """Natural-scale summary and histogram for every mechanistic and noise parameter.

    The negative binomial noise entry is reported as the dispersion d = 1/p.
    """
    rows = []
    truth = (ground_truth or {}).get("params", ground_truth or {})
    sl = space.slices()
    for seg in space.segments:
        if seg.role == "net":
            continue
        nat = seg.transform.to_natural(samples.draws[:, sl[seg.name]])
        for j in range(seg.length):
            v = nat[:, j]
            name = seg.name if seg.length == 1 else f"{seg.name}.{j}"
            if seg.name == "inv_d":
                v, name = 1.0 / v, "d"
            lo, hi = float(v.min()), float(v.max())
            if hi > lo:
                counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
            else:
                counts, edges = np.array([v.size]), np.array([lo, hi])
            rows.append(
                {
                    "parameter": name,
                    "mean": float(v.mean()),
                    "median": float(quantile7(v, 0.5)),
                    "q01": float(quantile7(v, 0.01)),
                    "q99": float(quantile7(v, 0.99)),
                    "truth": float(truth[name]) if name in truth else None,
                    "counts": counts.tolist(),
                    "edges": edges.tolist(),
                }
            )
    return rows


def write_parameter_tables(summary_path, hist_path, rows: list[dict]) -> None:
    lines = ["parameter,mean,median,q01,q99,truth"]
    for r in rows:
        truth = "" if r["truth"] is None else repr(r["truth"])
        lines.append(f"{r['parameter']},{r['mean']!r},{r['median']!r},{r['q01']!r},{r['q99']!r},{truth}")
    Path(summary_path).write_text("\n".join(lines) + "\n")
    lines = ["parameter,bin_lo,bin_hi,count"]
    for r in rows:
        e = r["edges"]
        for i, c in enumerate(r["counts"]):
            lines.append(f"{r['parameter']},{e[i]!r},{e[i + 1]!r},{c}")
    Path(hist_path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Bias-variance decomposition over data replicates
# ---------------------------------------------------------------------------


@dataclass
class BiasVarianceTable:
    times: np.ndarray
    series: list[str]
    bias2: np.ndarray  # (n_t, n_series)
    variance: np.ndarray
    noise: np.ndarray
    mse: np.ndarray  # empirical squared error against fresh noisy data

    def totals(self) -> dict:
        return {
            "bias2": float(self.bias2.mean()),
            "variance": float(self.variance.mean()),
            "noise": float(self.noise.mean()),
            "mse": float(self.mse.mean()),
            "sum": float((self.bias2 + self.variance + self.noise).mean()),
        }

    def to_csv(self, path) -> None:
        rows = ["t,state,bias2,variance,noise,mse"]
        for ti, t in enumerate(self.times):
            for si, s in enumerate(self.series):
                rows.append(
                    f"{t!r},{s},{self.bias2[ti, si]!r},{self.variance[ti, si]!r},{self.noise[ti, si]!r},{self.mse[ti, si]!r}"
                )
        Path(path).write_text("\n".join(rows) + "\n")


Fitter = Callable[[UdeProblem, ParamSpace, object, int], np.ndarray]


def bias_variance_report(
    scenario: str,
    noise: NoiseModel,
    fitter: Fitter,
    replicates: int,
    seed: int = 0,
) -> BiasVarianceTable:
    """Empirical bias^2, variance and noise terms of the squared prediction error.

    Each replicate draws a fresh dataset, fits it with ``fitter(problem,
    space, data, seed) -> theta_raw`` and predicts the observables at the
    observation times.  The squared error is measured against an independent
    noisy copy of the data, so its mean estimates the sum of the three terms.
    """
    if replicates < 2:
        raise ConfigError("at least two replicates are required")
    problem = make_problem(scenario, noise.kind)
    space = make_space(problem)
    times = problem.obs_times()
    truth = problem.observe(reference_trajectory(problem, times).states)
    fld = compose_ude_rhs(problem, space)
    preds, fresh = [], []
    for r in range(replicates):
        data = generate_dataset(scenario, noise, seed + r)
        if data.ground_truth is None:
            raise ConfigError("bias-variance analysis needs synthetic data with ground truth")
        theta = fitter(problem, space, data, seed + r)
        tr = simulate(fld, theta, times)
        preds.append(problem.observe(tr.states) if tr.success else np.full_like(truth, np.nan))
        rng = rng_for(seed + r, 7)
        if noise.kind == "gaussian":
            fresh.append(truth + noise.value * rng.standard_normal(truth.shape))
        else:
            fresh.append(negbin_sample(rng, np.maximum(truth, 1e-6), noise.value).astype(float))
    preds = np.array(preds)
    fresh = np.array(fresh)
    keep = np.all(np.isfinite(preds), axis=(1, 2))
    if keep.sum() < 2:
        raise ReportError("fewer than two replicate fits produced finite predictions")
    preds, fresh = preds[keep], fresh[keep]
    mean_pred = preds.mean(axis=0)
    return BiasVarianceTable(
        times,
        [problem.state_names[i] for i in problem.observed],
        (mean_pred - truth) ** 2,
        preds.var(axis=0),
        ((fresh - truth) ** 2).mean(axis=0),
        ((fresh - preds) ** 2).mean(axis=0),
    )


# ---------------------------------------------------------------------------
# SVG charts
# ---------------------------------------------------------------------------

_FILLS = ("#c6dbef", "#9ecae1", "#6baed6")


def band_svg(
    path,
    band: PredictionBand,
    series: str,
    data: tuple[np.ndarray, np.ndarray] | None = None,
    reference: np.ndarray | None = None,
    width: int = 640,
    height: int = 360,
) -> None:
    """Band fills (widest first), median line, data markers and a dashed reference line."""
    si = band.series.index(series)
    t = band.times
    ys = [band.lower[:, :, si], band.upper[:, :, si], band.median[:, si]]
    if data is not None:
        ys.append(np.asarray(data[1], float))
    if reference is not None:
        ys.append(np.asarray(reference, float))
    y_all = np.concatenate([np.ravel(v) for v in ys])
    y_lo, y_hi = float(np.nanmin(y_all)), float(np.nanmax(y_all))
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    m = 40

    def px(x):
        return m + (x - t[0]) / (t[-1] - t[0]) * (width - 2 * m)

    def py(y):
        return height - m - (y - y_lo) / (y_hi - y_lo) * (height - 2 * m)

    def pts(xs, vals):
        return " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, vals))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    parts.append(f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>')
    order = np.argsort(band.levels)[::-1]
    for k, li in enumerate(order):
        poly = pts(t, band.upper[li, :, si]) + " " + pts(t[::-1], band.lower[li, ::-1, si])
        parts.append(f'<polygon points="{poly}" fill="{_FILLS[k % len(_FILLS)]}" stroke="none"/>')
    parts.append(f'<polyline points="{pts(t, band.median[:, si])}" fill="none" stroke="#08519c" stroke-width="1.5"/>')
    if reference is not None:
        parts.append(
            f'<polyline points="{pts(t, reference)}" fill="none" stroke="#a50f15" stroke-width="1.5" stroke-dasharray="6,4"/>'
        )
    if data is not None:
        for x, y in zip(*data):
            parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="black"/>')
    parts.append(
        f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>'
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>'
    )
    parts.append(f'<text x="{width / 2:.0f}" y="{height - 8}" font-size="12" text-anchor="middle">t</text>')
    parts.append(f'<text x="{m}" y="{m - 10}" font-size="12">{series} [{y_lo:.3g}, {y_hi:.3g}]</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
