import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from udeuq.core import compose_ude_rhs, make_problem, make_space, reference_rhs
from udeuq.errors import ContractError
from udeuq.likelihood import reference_trajectory
from udeuq.solve import (
    GENERATION_SOLVER,
    TRAINING_SOLVER,
    SolverConfig,
    integrate,
    rk4_grid,
    simulate,
    simulate_with_adjoint,
)

from conftest import random_theta


def logistic(t, x0=0.1, alpha=1.0, beta=2.0):
    k = alpha / beta
    return k / (1.0 + (k / x0 - 1.0) * np.exp(-alpha * t))


@pytest.mark.parametrize("cfg", [TRAINING_SOLVER, GENERATION_SOLVER], ids=["rk4", "dopri"])
def test_logistic_closed_form(cfg):
    f, _ = reference_rhs(make_problem("quadratic"))
    t = np.linspace(0.5, 10.0, 20)
    tr = integrate(f, [0.1], t, cfg=cfg, t0=0.0)
    assert tr.success
    assert tr.states[:, 0] == pytest.approx(logistic(t), abs=1e-7)


def test_rk4_is_fourth_order():
    f = lambda t, x: -x
    errs = []
    for n in (20, 40, 80):
        tr = integrate(f, [1.0], [2.0], cfg=SolverConfig(n_steps=n), t0=0.0)
        errs.append(abs(tr.states[0, 0] - math.exp(-2.0)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 3.8)


def test_dopri_meets_tolerance_on_oscillator():
    f = lambda t, x: np.array([x[1], -x[0]])
    t = np.linspace(0.1, 20.0, 50)
    tr = integrate(f, [1.0, 0.0], t, cfg=SolverConfig("dopri45_adaptive", abs_tol=1e-10, rel_tol=1e-10), t0=0.0)
    assert tr.states[:, 0] == pytest.approx(np.cos(t), abs=1e-8)


@given(
    out=st.lists(st.floats(0.01, 50.0), min_size=1, max_size=8, unique=True),
    step=st.floats(0.05, 3.0),
    stop=st.floats(0.01, 50.0),
)
def test_rk4_grid_contains_outputs_and_breakpoints(out, step, stop):
    out = np.sort(np.array(out))
    ts, idx = rk4_grid(0.0, out, step, (stop,))
    assert ts[0] == 0.0
    assert np.all(np.diff(ts) > 0)
    assert np.array_equal(ts[idx], out)
    if stop < out[-1]:
        assert np.min(np.abs(ts - stop)) == 0.0
    assert np.max(np.diff(ts)) <= step * (1 + 1e-9)


def test_output_time_contract():
    f = lambda t, x: -x
    with pytest.raises(ContractError):
        integrate(f, [1.0], [1.0, 0.5], t0=0.0)
    with pytest.raises(ContractError):
        integrate(f, [1.0], [], t0=0.0)
    with pytest.raises(ContractError):
        integrate(f, [1.0], [0.5], t0=1.0)


@pytest.mark.parametrize("scenario", ["quadratic", "seir_waves", "seir_pulse"])
def test_compiled_kernel_matches_generic_stepper(scenario):
    problem = make_problem(scenario)
    space = make_space(problem)
    field = compose_ude_rhs(problem, space)
    theta = random_theta(space, 1)
    t = problem.obs_times()
    fast = simulate(field, theta, t)
    # a breakpoint beyond the horizon forces the interpreted RK4 path on the same grid
    slow = integrate(field, problem.x0, t, theta, TRAINING_SOLVER, tstops=(1e9,))
    assert fast.success and slow.success
    assert fast.states == pytest.approx(slow.states, rel=1e-10, abs=1e-13)


def test_blow_up_is_reported_not_raised(quad):
    problem, space = quad
    theta = np.zeros(space.total_dim)
    theta[0] = 6.0  # alpha = e^6 and no damping
    tr = simulate(compose_ude_rhs(problem, space), theta, problem.obs_times())
    assert not tr.success
    assert tr.failure_reason
    _, vjp = simulate_with_adjoint(compose_ude_rhs(problem, space), theta, problem.obs_times())
    assert vjp is None


@pytest.mark.parametrize("scenario", ["seir_waves", "seir_pulse"])
def test_reference_seir_conserves_population(scenario):
    problem = make_problem(scenario)
    tr = reference_trajectory(problem, np.linspace(1.0, 130.0, 200))
    drift = np.abs(tr.states.sum(axis=1) - sum(problem.x0)) / sum(problem.x0)
    assert drift.max() <= 1e-6


@settings(max_examples=15)
@given(seed=st.integers(0, 2**31 - 1))
def test_ude_seir_conserves_population(seed):
    problem = make_problem("seir_waves", "negbin")
    space = make_space(problem)
    theta = random_theta(space, seed, net_scale=1.0)
    tr = simulate(compose_ude_rhs(problem, space), theta, np.linspace(0.5, 130.0, 60))
    if tr.success:
        drift = np.abs(tr.states.sum(axis=1) - sum(problem.x0)) / sum(problem.x0)
        assert drift.max() <= 1e-6


def test_vjp_matches_finite_difference_of_a_linear_functional(waves):
    problem, space = waves
    field = compose_ude_rhs(problem, space)
    t = problem.obs_times()
    theta = random_theta(space, 4)
    w = np.random.default_rng(0).normal(size=(t.size, problem.n_x))
    tr, vjp = simulate_with_adjoint(field, theta, t)
    g = vjp(w)
    h = 1e-6
    for i in (0, 1, 2, 20, 62):
        e = np.zeros_like(theta)
        e[i] = h
        fp = np.sum(w * simulate(field, theta + e, t).states)
        fm = np.sum(w * simulate(field, theta - e, t).states)
        assert g[i] == pytest.approx((fp - fm) / (2 * h), rel=1e-5, abs=1e-9)
    assert g[63] == 0.0  # the noise parameter does not enter the dynamics


def test_zero_population_is_a_failed_solve_not_an_exception(waves):
    problem, space = waves
    tr = simulate(compose_ude_rhs(problem, space), np.zeros(space.total_dim), problem.obs_times(), x0=np.zeros(4))
    assert not tr.success
