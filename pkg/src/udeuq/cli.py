"""Command-line entry point: ``udeuq {generate,fit,report} --config run.json``."""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numba
import numpy as np
import scipy

import udeuq
from udeuq.config import RunConfig
from udeuq.core import make_problem, make_space
from udeuq.ensemble import load_ensemble, run_multistart, save_ensemble, select_members
from udeuq.errors import ConfigError, ContractError, DataError, DomainError, UdeUqError
from udeuq.likelihood import Dataset, UdeLikelihood, generate_dataset
from udeuq.mcmc import (
    PtLadder,
    chain_diagnostics,
    nuts_sample,
    parallel_tempering,
    read_samples_csv,
    warm_start,
    write_diagnostics,
    write_samples_csv,
)
from udeuq.posterior import PosteriorSamples
from udeuq.report import (
    band_svg,
    beta_bands,
    dense_grid,
    parameter_posteriors,
    predict_new_ic,
    reference_bands,
    reference_beta,
    trajectory_bands,
    write_parameter_tables,
)
from udeuq.vi import MeanFieldPosterior, vi_fit, vi_sample

log = logging.getLogger("udeuq")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
FIT_METHODS = ("ensemble", "nuts", "pt", "vi")


def _dataset_path(cfg: RunConfig) -> Path:
    return cfg.output_path / "data" / "dataset.csv"


def _ensure_dir(p: Path) -> Path:
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {p}: {exc.strerror}") from exc
    return p


def cmd_generate(cfg: RunConfig) -> Path:
    data = generate_dataset(cfg.scenario, cfg.noise, cfg.seed)
    path = _dataset_path(cfg)
    _ensure_dir(path.parent)
    try:
        data.to_csv(path)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}") from exc
    log.info("wrote %d observations to %s", data.n_t, path)
    return path


def _load_data(cfg: RunConfig, config_path: str | None = None) -> Dataset:
    path = _dataset_path(cfg)
    if not path.exists():
        hint = f" --config {config_path}" if config_path else ""
        raise DataError(f"dataset {path} not found; run `udeuq generate{hint}` first")
    return Dataset.from_csv(path)


def _versions() -> dict:
    return {
        "udeuq": udeuq.__version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def cmd_fit(cfg: RunConfig, config_path: str | None = None) -> Path:
    data = _load_data(cfg, config_path)
    problem = make_problem(cfg.scenario, cfg.noise.kind)
    space = make_space(problem)
    out = _ensure_dir(cfg.output_path / "fit" / cfg.method)
    p = cfg.params
    start = time.perf_counter()
    if cfg.method == "ensemble":
        fits = run_multistart(problem, space, data, p.m, p.fit_config(cfg.seed), cfg.parallelism, p.net_init, cfg.solver)
        ens = select_members(fits, p.alpha, p.df)
        save_ensemble(out, ens)
        log.info("accepted %d of %d members (threshold %.5f)", len(ens.accepted_indices), len(fits), ens.threshold)
    else:
        lik = UdeLikelihood(problem, space, data, cfg.solver)
        theta0 = warm_start(problem, space, data, p.warm_start.fit_config(cfg.seed))
        columns = space.column_names()
        if cfg.method == "nuts":
            chain = nuts_sample(
                lik.log_posterior_and_grad, None, theta0, p.n_samples, p.n_warmup, cfg.seed, p.max_depth, p.target_accept
            )
            write_samples_csv(out / "samples.csv", chain, columns)
            if p.n_samples >= 4:
                write_diagnostics(out / "diagnostics.json", {**chain_diagnostics([chain]), **_stats(chain)})
        elif cfg.method == "pt":
            ladder = PtLadder(p.temperatures)
            chain, ladder = parallel_tempering(
                lik.log_posterior_and_grad, None, theta0, ladder, p.n_samples, cfg.seed, p.n_warmup, p.max_depth, p.target_accept
            )
            write_samples_csv(out / "samples.csv", chain, columns)
            diag = _stats(chain)
            diag["temperatures"] = list(ladder.temperatures)
            diag["swap_accept_counts"] = ladder.swap_accept_counts.tolist()
            if p.n_samples >= 4:
                diag.update(chain_diagnostics([chain]))
            write_diagnostics(out / "diagnostics.json", diag)
        else:
            q = vi_fit(
                lik.log_posterior_and_grad, None, theta0, p.steps, p.n_mc, p.lr, cfg.seed, p.init_log_sigma, columns, p.average_tail
            )
            q.save(out / "posterior.json", out / "elbo.csv")
    manifest = {
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "wall_time_s": time.perf_counter() - start,
        "versions": _versions(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _stats(chain) -> dict:
    s = {k: v for k, v in chain.acceptance_stats.items() if k != "inv_metric"}
    s["divergence_count"] = chain.divergence_count
    return s


def _load_samples(method: str, fit_dir: Path, cfg: RunConfig) -> PosteriorSamples:
    if method == "ensemble":
        return PosteriorSamples.from_ensemble(load_ensemble(fit_dir))
    if method in ("nuts", "pt"):
        chain = read_samples_csv(fit_dir / "samples.csv")
        draws = chain.samples
        if draws.shape[0] > cfg.report.max_draws:
            idx = np.linspace(0, draws.shape[0] - 1, cfg.report.max_draws).round().astype(int)
            draws = draws[idx]
        return PosteriorSamples(draws, "mcmc")
    q = MeanFieldPosterior.from_dict(json.loads((fit_dir / "posterior.json").read_text()))
    n = cfg.params.n_draws if cfg.method == "vi" else 1000
    return vi_sample(q, min(n, cfg.report.max_draws), cfg.seed)


def cmd_report(cfg: RunConfig, x0_override=None) -> Path:
    fit_root = cfg.output_path / "fit"
    found = [m for m in FIT_METHODS if (fit_root / m / "manifest.json").exists()]
    if not found:
        raise DataError(f"no fit artifacts under {fit_root}; run `udeuq fit` first")
    data = Dataset.from_csv(_dataset_path(cfg)) if _dataset_path(cfg).exists() else None
    problem = make_problem(cfg.scenario, cfg.noise.kind)
    space = make_space(problem)
    grid = dense_grid(problem, cfg.report.grid_points)
    levels = tuple(cfg.report.levels)
    top = max(levels)
    ref = reference_bands(problem, grid)
    x0_new = x0_override if x0_override is not None else cfg.report.x0_override
    rows = ["method,state,level,mean_width,reference_coverage"]
    for method in found:
        out = _ensure_dir(cfg.output_path / "report" / method)
        samples = _load_samples(method, fit_root / method, cfg)
        band = trajectory_bands(samples, problem, space, grid, levels, "epistemic_only", 0, cfg.seed, None, cfg.solver)
        band.to_csv(out / "bands_states.csv")
        full = trajectory_bands(
            samples, problem, space, grid, levels, "full_predictive", cfg.report.noise_draws, cfg.seed, None, cfg.solver
        )
        full.to_csv(out / "bands_observables.csv")
        li = band.level_index(top)
        for si, name in enumerate(band.series):
            inside = (band.lower[li, :, si] <= ref[:, si]) & (ref[:, si] <= band.upper[li, :, si])
            rows.append(f"{method},{name},{top!r},{float(band.width(top)[:, si].mean())!r},{float(inside.mean())!r}")
        write_parameter_tables(
            out / "parameters.csv",
            out / "histograms.csv",
            parameter_posteriors(samples, space, data.ground_truth if data else None),
        )
        if problem.is_seir:
            bb = beta_bands(samples, problem, space, grid, levels)
            bb.to_csv(out / "beta_bands.csv")
            if cfg.report.svg:
                band_svg(out / "beta.svg", bb, "beta", reference=reference_beta(problem, grid))
        if x0_new is not None:
            nb = predict_new_ic(samples, problem, space, np.asarray(x0_new, float), grid, levels, cfg.solver)
            nb.to_csv(out / "bands_new_ic.csv")
            if cfg.report.svg:
                ref_new = reference_bands(problem, grid, np.asarray(x0_new, float))
                for si, name in enumerate(nb.series):
                    band_svg(out / f"new_ic_{name}.svg", nb, name, reference=ref_new[:, si])
        if cfg.report.svg:
            obs_cols = {i: k for k, i in enumerate(problem.observed)}
            for si, name in enumerate(band.series):
                pts = None
                if data is not None and si in obs_cols:
                    pts = (data.times, data.observations[:, obs_cols[si]])
                band_svg(out / f"{name}.svg", band, name, pts, ref[:, si])
        log.info("report for %s written to %s", method, out)
    path = _ensure_dir(cfg.output_path / "report") / "comparison.csv"
    path.write_text("\n".join(rows) + "\n")
    return path


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, (ConfigError, ContractError, DomainError)):
        return EXIT_CONFIG
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="udeuq", description="Uncertainty quantification for universal differential equations")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "fit", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the run's JSON config")
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = RunConfig.load(args.config)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "fit":
            cmd_fit(cfg, args.config)
        else:
            cmd_report(cfg)
    except UdeUqError as exc:
        log.error("%s", exc)
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
