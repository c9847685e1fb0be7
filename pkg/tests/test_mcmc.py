import math

import numpy as np
import pytest
from scipy import stats

from udeuq.core import LOG_SENTINEL
from udeuq.errors import ContractError, InitializationError
from udeuq.mcmc import (
    ChainResult,
    PtLadder,
    chain_diagnostics,
    geometric_ladder,
    nuts_sample,
    parallel_tempering,
    read_samples_csv,
    warm_start,
    write_diagnostics,
    write_samples_csv,
)
from udeuq.optimize import FitConfig


def std_normal(x):
    return -0.5 * float(x @ x), -x


def scaled_normal(mu, var):
    mu, var = np.asarray(mu, float), np.asarray(var, float)
    return lambda x: (-0.5 * float(((x - mu) ** 2 / var).sum()), -(x - mu) / var)


def bimodal(x):
    a = -0.5 * ((x - 4.0) / 0.5) ** 2
    b = -0.5 * ((x + 4.0) / 0.5) ** 2
    m = np.logaddexp(a, b)
    wa = np.exp(a - m)
    return float(m[0]), -(x - 4.0) / 0.25 * wa - (x + 4.0) / 0.25 * (1 - wa)


def test_nuts_standard_normal_moments():
    r = nuts_sample(std_normal, None, [0.3], 4000, 500, seed=1)
    x = r.samples[:, 0]
    assert abs(x.mean()) < 0.08
    assert x.var() == pytest.approx(1.0, rel=0.1)
    assert stats.kstest(x, "norm").statistic < 0.03
    assert r.divergence_count == 0
    assert 0.6 < r.acceptance_stats["mean_accept_stat"] < 0.95


def test_nuts_adapts_diagonal_metric_to_scales():
    r = nuts_sample(scaled_normal([1.0, -2.0], [0.01, 25.0]), None, [0.0, 0.0], 3000, 800, seed=2)
    assert abs(r.samples[:, 0].mean() - 1.0) < 0.02 and abs(r.samples[:, 1].mean() + 2.0) < 0.5
    assert r.samples.var(0) == pytest.approx([0.01, 25.0], rel=0.15)
    inv_metric = np.array(r.acceptance_stats["inv_metric"])
    assert inv_metric[1] / inv_metric[0] > 100


def test_nuts_accepts_separate_gradient_callable():
    lp = lambda x: -0.5 * float(x @ x)
    g = lambda x: -x
    a = nuts_sample(lp, g, [0.1, 0.2], 50, 50, seed=4)
    b = nuts_sample(std_normal, None, [0.1, 0.2], 50, 50, seed=4)
    assert np.array_equal(a.samples, b.samples)


def test_nuts_is_reproducible_by_seed():
    a = nuts_sample(std_normal, None, [0.0], 100, 100, seed=9)
    assert np.array_equal(a.samples, nuts_sample(std_normal, None, [0.0], 100, 100, seed=9).samples)
    assert not np.array_equal(a.samples, nuts_sample(std_normal, None, [0.0], 100, 100, seed=10).samples)


def test_nuts_stays_inside_support():
    # half-normal on x > 0; the sentinel outside must never be visited
    f = lambda x: (LOG_SENTINEL, np.zeros(1)) if x[0] <= 0 else (-0.5 * float(x[0] ** 2), -x)
    r = nuts_sample(f, None, [1.0], 3000, 500, seed=3)
    assert np.all(r.samples > 0)
    assert r.samples.mean() == pytest.approx(math.sqrt(2 / math.pi), abs=0.08)


def test_sentinel_start_raises():
    f = lambda x: (LOG_SENTINEL, np.zeros_like(x))
    with pytest.raises(InitializationError):
        nuts_sample(f, None, [0.0], 10, 10)
    with pytest.raises(InitializationError):
        parallel_tempering(f, None, [0.0], PtLadder((1.0, 2.0)), 10, n_warmup=10)


def test_very_low_but_finite_log_density_is_a_valid_start():
    f = lambda x: (-0.5e12 * float(x @ x), -1e12 * x)
    r = nuts_sample(f, None, [3.0], 20, 200, seed=0)
    assert np.all(np.isfinite(r.samples))
    assert np.abs(r.samples).max() < 1e-3


def test_parallel_tempering_visits_both_modes():
    r, ladder = parallel_tempering(bimodal, None, [4.0], PtLadder(geometric_ladder(6, 50.0)), 3000, seed=3, n_warmup=300)
    frac = (r.samples[:, 0] > 0).mean()
    assert 0.3 < frac < 0.7
    assert abs(r.samples.mean()) < 1.0
    assert np.all(ladder.swap_accept_counts[:, 1] > 0)
    assert np.all(ladder.swap_rates > 0.2)


def test_single_nuts_chain_is_stuck_in_one_mode():
    r = nuts_sample(bimodal, None, [4.0], 1000, 300, seed=3)
    assert np.all(r.samples > 0)


def test_ladder_validation():
    with pytest.raises(ContractError):
        PtLadder((2.0, 3.0))
    with pytest.raises(ContractError):
        PtLadder((1.0, 3.0, 3.0))
    assert PtLadder().temperatures == geometric_ladder()
    lad = geometric_ladder(8, 30.0)
    assert lad[0] == 1.0 and lad[-1] == pytest.approx(30.0)
    assert np.allclose(np.diff(np.log(lad)), math.log(30.0) / 7)


def test_diagnostics_on_iid_chains():
    rng = np.random.default_rng(0)
    chains = [ChainResult(rng.normal(size=(1000, 2)), np.zeros(1000), i) for i in range(4)]
    d = chain_diagnostics(chains)
    assert np.all(np.abs(np.array(d["rhat"]) - 1) < 0.01)
    assert np.all(np.array(d["ess_bulk"]) > 3000)


def test_diagnostics_flag_disagreeing_chains():
    rng = np.random.default_rng(1)
    chains = [ChainResult(rng.normal(i, 1.0, size=(500, 1)), np.zeros(500)) for i in range(3)]
    assert chain_diagnostics(chains)["rhat"][0] > 1.1


def test_diagnostics_constant_dimension():
    x = np.column_stack([np.random.default_rng(2).normal(size=50), np.ones(50)])
    d = chain_diagnostics([ChainResult(x, np.zeros(50))])
    assert math.isnan(d["rhat"][1]) and d["ess_bulk"][1] == 0
    with pytest.raises(ContractError):
        chain_diagnostics([ChainResult(x[:3], np.zeros(3))])


def test_autocorrelated_chain_has_small_ess():
    rng = np.random.default_rng(3)
    x = np.empty(2000)
    x[0] = 0.0
    for i in range(1, x.size):
        x[i] = 0.95 * x[i - 1] + rng.normal()
    ess = chain_diagnostics([ChainResult(x[:, None], np.zeros(x.size))])["ess_bulk"][0]
    # AR(1) with phi = 0.95: n (1 - phi) / (1 + phi) ~ 51
    assert 20 < ess < 120


def test_samples_csv_and_diagnostics_round_trip(tmp_path):
    r = nuts_sample(std_normal, None, [0.0, 0.0], 20, 20, seed=0)
    write_samples_csv(tmp_path / "s.csv", r, ["a", "b"])
    back = read_samples_csv(tmp_path / "s.csv")
    assert np.array_equal(back.samples, r.samples) and np.array_equal(back.log_posts, r.log_posts)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "draw,logpost,a,b"
    with pytest.raises(ContractError):
        write_samples_csv(tmp_path / "x.csv", r, ["a"])
    write_diagnostics(tmp_path / "d.json", {"rhat": [float("nan"), 1.0]})
    assert "null" in (tmp_path / "d.json").read_text()


def test_warm_start_returns_a_finite_point(quad, quad_data):
    problem, space = quad
    theta = warm_start(problem, space, quad_data, FitConfig(adam_epochs=30, adam_lr=1e-2, qn_max_iters=10, seed=1))
    assert theta.shape == (space.total_dim,) and np.all(np.isfinite(theta))
    start_only = warm_start(problem, space, quad_data, FitConfig(adam_epochs=0, qn_max_iters=0, seed=1))
    assert not np.array_equal(theta, start_only)
