import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from udeuq.core import NEGLL_PENALTY, make_problem
from udeuq.errors import ConfigError
from udeuq.likelihood import UdeLikelihood
from udeuq.optimize import FitConfig, FitResult, adam_run, fit_single, quasi_newton_run, sample_start_point


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def bowl(x):
    w = np.arange(1.0, x.size + 1)
    return float(np.sum(w * (x - 1.0) ** 2)), 2 * w * (x - 1.0)


def test_bfgs_solves_rosenbrock():
    tr = quasi_newton_run(rosenbrock, [-1.2, 1.0], 200, gtol=1e-9)
    assert tr.converged
    assert tr.theta == pytest.approx([1.0, 1.0], abs=1e-6)
    assert np.all(np.diff(tr.values) <= 0)


def test_bfgs_survives_huge_initial_gradient():
    # steepest first step is rescaled so the line search starts at a sane length
    f = lambda x: (float(1e12 * x @ x), 2e12 * x)
    tr = quasi_newton_run(f, np.full(3, 5.0), 50)
    assert tr.value < 1e-6


def test_bfgs_treats_penalty_as_failed_trial():
    def f(x):
        if x[0] < 0.5:
            return NEGLL_PENALTY, np.zeros(2)
        return bowl(x)

    tr = quasi_newton_run(f, [3.0, -2.0], 100)
    assert tr.theta[0] >= 0.5
    assert tr.value == pytest.approx(0.0, abs=1e-8)


def test_adam_converges_on_a_bowl():
    tr = adam_run(bowl, np.zeros(4), 3000, lr=0.05)
    assert tr.theta == pytest.approx(np.ones(4), abs=1e-3)
    assert tr.iterations == 3000


def test_adam_backs_off_from_penalty_region():
    calls = {"penalty": 0}

    def f(x):
        if x[0] > 0.5:
            calls["penalty"] += 1
            return NEGLL_PENALTY, np.zeros(1)
        return float((x[0] - 1.0) ** 2), 2 * (x - 1.0)

    tr = adam_run(f, np.zeros(1), 500, lr=0.1)
    assert calls["penalty"] > 0
    assert tr.theta[0] <= 0.5 and math.isfinite(tr.value)
    assert all(v != NEGLL_PENALTY for v in tr.values)


def test_penalty_start_is_reported():
    f = lambda x: (NEGLL_PENALTY, np.zeros_like(x))
    assert adam_run(f, np.zeros(2), 10).reason == "start point is penalty-valued"
    assert not quasi_newton_run(f, np.zeros(2), 10).converged


@pytest.mark.parametrize(
    "kwargs", [{"adam_epochs": -1}, {"adam_lr": 0.0}, {"l2_penalty": -1.0}, {"val_fraction": 1.0}, {"seed": -2}]
)
def test_fit_config_validation(kwargs):
    with pytest.raises(ConfigError):
        FitConfig(**kwargs)


def test_fit_config_round_trip():
    cfg = FitConfig(adam_epochs=10, seed=4)
    assert FitConfig.from_dict(cfg.to_dict()) == cfg


@given(
    vals=st.tuples(*[st.floats(-1e6, 1e6)] * 3),
    seed=st.integers(0, 1000),
    conv=st.booleans(),
)
def test_fit_result_json_round_trip(vals, seed, conv):
    r = FitResult(np.array([0.1, -2.0]), *vals, conv, seed, {"adam": 3, "qn": 1}, np.zeros(2), "ok")
    back = FitResult.from_json(r.to_json())
    assert back.to_json() == r.to_json()
    assert np.array_equal(back.theta_best_raw, r.theta_best_raw)


def test_start_points_are_seeded_and_within_start_ranges(quad):
    problem, space = quad
    a = sample_start_point(space, 7, mlp=problem.mlp)
    assert np.array_equal(a, sample_start_point(space, 7, mlp=problem.mlp))
    assert not np.array_equal(a, sample_start_point(space, 8, mlp=problem.mlp))
    assert 0.1 <= math.exp(a[0]) <= 10.0 and 0.1 <= math.exp(a[-1]) <= 10.0
    z = sample_start_point(space, 7, "zeros")
    assert not np.any(z[space.slices()["net"]])
    with pytest.raises(ConfigError):
        sample_start_point(space, 0, mlp=make_problem("quadratic", layer_sizes=(1, 3, 1)).mlp)


def test_short_fit_improves_and_tracks_validation(quad, quad_data):
    problem, space = quad
    cfg = FitConfig(adam_epochs=150, adam_lr=1e-2, qn_max_iters=40, seed=3)
    res = fit_single(problem, space, quad_data, cfg)
    lik = UdeLikelihood(problem, space, quad_data)
    assert res.negll_full < lik.negll(res.theta0_raw)
    assert res.negll_full == pytest.approx(lik.negll(res.theta_best_raw))
    assert res.negll_train + res.negll_val == pytest.approx(res.negll_full, rel=1e-10)
    assert res.iterations["adam"] == 150
    again = fit_single(problem, space, quad_data, cfg)
    assert np.array_equal(again.theta_best_raw, res.theta_best_raw)


def test_fit_from_unusable_start_reports_no_finite_evaluation(quad, quad_data):
    problem, space = quad
    theta0 = np.zeros(space.total_dim)
    theta0[0] = 6.0
    res = fit_single(problem, space, quad_data, FitConfig(adam_epochs=5, qn_max_iters=5), theta0)
    assert res.message == "no finite evaluation"
    assert res.negll_full == NEGLL_PENALTY and not res.converged
