import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from udeuq.core import NEGLL_PENALTY
from udeuq.ensemble import (
    chi2_quantile,
    load_ensemble,
    run_multistart,
    sample_start_points,
    save_ensemble,
    select_members,
    waterfall,
)
from udeuq.errors import ConfigError, EmptyEnsembleError
from udeuq.optimize import FitConfig, FitResult


def fake_fits(values):
    return [FitResult(np.array([float(i)]), v, 0.0, v, True, i) for i, v in enumerate(values)]


@given(alpha=st.floats(1e-4, 0.5), df=st.integers(1, 60))
def test_chi2_quantile_matches_scipy(alpha, df):
    assert chi2_quantile(alpha, df) == pytest.approx(stats.chi2.ppf(1 - alpha, df), rel=1e-9)


def test_chi2_quantile_validation():
    with pytest.raises(ConfigError):
        chi2_quantile(0.0, 1)
    with pytest.raises(ConfigError):
        chi2_quantile(0.05, 0.5)


negll_lists = st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=1, max_size=30)


@given(vals=negll_lists, shift=st.floats(-1e3, 1e3))
def test_acceptance_invariant_under_constant_shift(vals, shift):
    a = select_members(fake_fits(vals))
    b = select_members(fake_fits([v + shift for v in vals]))
    assert a.mle_index == b.mle_index
    # shifts can move values across a rounding boundary only at the threshold itself
    lam = a.lambdas
    clear = np.abs(lam - a.threshold) > 1e-6 * (1 + np.abs(np.array(vals)).max() + abs(shift))
    assert np.array_equal(a.accepted[clear], b.accepted[clear])


@given(vals=negll_lists)
def test_selection_accepts_mle_and_respects_threshold(vals):
    ens = select_members(fake_fits(vals))
    assert ens.accepted[ens.mle_index]
    assert np.all(ens.lambdas[ens.accepted] <= ens.threshold)
    assert np.all(ens.lambdas[~ens.accepted] > ens.threshold)


def test_failed_fits_are_never_accepted():
    ens = select_members(fake_fits([10.0, NEGLL_PENALTY, np.inf, 11.0]))
    assert ens.accepted_indices == [0, 3]
    with pytest.raises(EmptyEnsembleError):
        select_members(fake_fits([NEGLL_PENALTY, np.nan]))
    with pytest.raises(EmptyEnsembleError):
        select_members([])


@given(vals=negll_lists)
def test_waterfall_is_sorted_and_anchored_at_zero(vals):
    w = waterfall(fake_fits(vals + [NEGLL_PENALTY]))
    assert len(w) == len(vals)
    assert w[0] == (1, 0.0)
    deltas = [d for _, d in w]
    assert deltas == sorted(deltas)


def test_save_load_round_trip(tmp_path):
    ens = select_members(fake_fits([3.0, 1.0, 2.5, NEGLL_PENALTY]))
    save_ensemble(tmp_path, ens)
    back = load_ensemble(tmp_path)
    assert back.accepted_indices == ens.accepted_indices == [1, 2]
    assert back.mle_index == 1 and back.threshold == ens.threshold
    assert (tmp_path / "waterfall.csv").read_text().splitlines()[:2] == ["rank,delta_negll", "1,0.0"]
    assert np.array_equal(back.accepted_thetas(), ens.accepted_thetas())


def test_start_points(quad):
    problem, space = quad
    pts = sample_start_points(space, 4, 10, mlp=problem.mlp)
    assert len({p.tobytes() for p in pts}) == 4
    zeros = sample_start_points(space, 4, 10, "zeros")
    nets = [p[space.slices()["net"]] for p in zeros]
    assert all(not np.any(n) for n in nets)
    # member i is seeded with seed + i regardless of m
    assert np.array_equal(sample_start_points(space, 2, 11, mlp=problem.mlp)[0], pts[1])
    with pytest.raises(ConfigError):
        sample_start_points(space, 0, 0)


def test_parallel_multistart_matches_serial(quad, quad_data):
    problem, space = quad
    cfg = FitConfig(adam_epochs=20, adam_lr=1e-2, qn_max_iters=5, seed=2)
    serial = run_multistart(problem, space, quad_data, 3, cfg, parallelism=1)
    pooled = run_multistart(problem, space, quad_data, 3, cfg, parallelism=2)
    assert [f.to_json() for f in serial] == [f.to_json() for f in pooled]
    assert [f.seed for f in serial] == [2, 3, 4]
