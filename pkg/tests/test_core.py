import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from udeuq.core import (
    LOG_SENTINEL,
    NEGLL_PENALTY,
    MlpSpec,
    ParamSpace,
    PriorSpec,
    Transform,
    beta_link,
    compose_ude_rhs,
    is_log_sentinel,
    is_penalty,
    make_problem,
    make_space,
    mlp_forward,
    mlp_init,
    mlp_unpack,
    rhs_seir,
    to_natural,
    to_raw,
)
from udeuq.errors import ConfigError, ContractError, DegenerateStateError, DomainError

finite = st.floats(-8, 8, allow_nan=False)

TRANSFORMS = [Transform(), Transform("log"), Transform.bounded(0.0, 24.0), Transform.tanh_box(2.0, 1.0, 0.5)]


@pytest.mark.parametrize("tr", TRANSFORMS, ids=lambda t: t.kind)
@given(raw=finite)
def test_transform_round_trip(tr, raw):
    nat = tr.to_natural(raw)
    lo, hi = tr.bounds
    if not lo < nat < hi:
        return  # tanh saturates to the boundary in double precision
    assert tr.to_raw(nat) == pytest.approx(raw, abs=1e-6)


@pytest.mark.parametrize("tr", TRANSFORMS, ids=lambda t: t.kind)
@given(raw=st.floats(-4, 4))
def test_transform_derivative_matches_finite_difference(tr, raw):
    h = 1e-6
    fd = (tr.to_natural(raw + h) - tr.to_natural(raw - h)) / (2 * h)
    assert tr.derivative(raw) == pytest.approx(fd, rel=1e-5, abs=1e-9)
    assert tr.log_abs_det(raw) == pytest.approx(math.log(tr.derivative(raw)), abs=1e-9)


def test_tanh_box_log_det_is_stable_far_out():
    tr = Transform.bounded(0.0, 1.0)
    v = tr.log_abs_det(np.array([400.0, -400.0]))
    assert np.all(np.isfinite(v))
    # log(4a) - 2|u| for a = 1/2 once exp(-2|u|) underflows
    assert v == pytest.approx([math.log(2.0) - 800.0] * 2)


def test_transform_rejects_values_outside_image():
    with pytest.raises(DomainError):
        Transform.bounded(0.0, 1.0).to_raw(1.5)
    with pytest.raises(DomainError):
        Transform("log").to_raw(-1.0)
    with pytest.raises(ConfigError):
        Transform("softplus")


@pytest.mark.parametrize(
    "prior, dist",
    [
        (PriorSpec("normal", (0.3, 2.0)), stats.norm(0.3, 2.0)),
        (PriorSpec("uniform", (-10.0, 10.0)), stats.uniform(-10.0, 20.0)),
        (PriorSpec("loguniform", (0.1, 10.0)), stats.loguniform(0.1, 10.0)),
        (PriorSpec("beta", (2.0, 2.0)), stats.beta(2.0, 2.0)),
        (PriorSpec("isotropic_normal", (math.sqrt(3.0),)), stats.norm(0.0, math.sqrt(3.0))),
    ],
    ids=lambda p: getattr(p, "kind", ""),
)
def test_prior_logpdf_matches_scipy(prior, dist):
    x = dist.ppf(np.array([0.05, 0.3, 0.5, 0.9]))
    assert prior.logpdf(x) == pytest.approx(float(np.sum(dist.logpdf(x))), rel=1e-10)
    h = 1e-6
    fd = np.array([(prior.logpdf([v + h]) - prior.logpdf([v - h])) / (2 * h) for v in x])
    assert prior.grad_logpdf(x) == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_prior_outside_support_is_the_sentinel():
    assert PriorSpec("uniform", (-10.0, 10.0)).logpdf([11.0]) == LOG_SENTINEL
    assert PriorSpec("beta", (2.0, 2.0)).logpdf([1.0]) == LOG_SENTINEL
    assert PriorSpec("normal", (0.0, 1.0)).logpdf([np.nan]) == LOG_SENTINEL


@pytest.mark.parametrize(
    "kind, params", [("normal", (0.0, 0.0)), ("uniform", (1.0, 1.0)), ("loguniform", (0.0, 1.0)), ("beta", (0.0, 1.0)), ("cauchy", (0, 1))]
)
def test_prior_validation(kind, params):
    with pytest.raises(ConfigError):
        PriorSpec(kind, params)


def test_sentinel_predicates_only_match_failures():
    assert is_penalty(NEGLL_PENALTY) and is_penalty(math.inf) and is_penalty(math.nan)
    assert not is_penalty(7.3e16)
    assert is_log_sentinel(LOG_SENTINEL) and is_log_sentinel(-math.inf)
    assert not is_log_sentinel(-7.3e16)


def test_parameter_counts(quad, waves):
    # (1, 6, 6, 1): 12 + 42 + 7 weights and biases
    assert quad[0].mlp.n_params == 61
    assert quad[1].total_dim == 63
    assert waves[1].total_dim == 64
    assert [s.name for s in waves[1].segments] == ["alpha", "gamma", "net", "sigma"]
    assert make_space(make_problem("seir_pulse", "negbin")).segments[-1].name == "inv_d"
    assert len(quad[1].column_names()) == 63


@given(seed=st.integers(0, 10_000))
def test_space_natural_round_trip(seed):
    space = make_space(make_problem("seir_waves"))
    raw = np.random.default_rng(seed).normal(0, 1.5, space.total_dim)
    assert to_raw(space, to_natural(space, raw)) == pytest.approx(raw, abs=1e-8)


def test_space_serialization_round_trip(pulse_nb):
    space = pulse_nb[1]
    assert ParamSpace.from_dict(space.to_dict()) == space
    with pytest.raises(ContractError):
        to_natural(space, np.zeros(3))


def test_mlp_forward_matches_direct_evaluation():
    spec = MlpSpec((1, 6, 6, 1), 130.0)
    theta = np.random.default_rng(3).normal(size=spec.n_params)
    (W1, b1), (W2, b2), (W3, b3) = mlp_unpack(spec, theta)
    for t in (0.0, 17.5, 130.0):
        h = np.tanh(W1 @ np.array([t / 130.0]) + b1)
        h = np.tanh(W2 @ h + b2)
        assert mlp_forward(spec, theta, t) == pytest.approx(float((W3 @ h + b3)[0]), rel=1e-12)


def test_mlp_init_schemes():
    spec = MlpSpec()
    assert not np.any(mlp_init(spec, 0, "zeros"))
    a, b = mlp_init(spec, 1), mlp_init(spec, 1)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, mlp_init(spec, 2))
    w1 = mlp_unpack(spec, a)[1][0]
    assert np.all(np.abs(w1) <= math.sqrt(6.0 / 12.0))
    with pytest.raises(ConfigError):
        mlp_init(spec, 0, "he_normal")


@given(
    x=st.lists(st.floats(0, 1000), min_size=4, max_size=4),
    beta=st.floats(0, 5),
    alpha=st.floats(0, 24),
    gamma=st.floats(0, 1),
)
def test_seir_rhs_conserves_mass(x, beta, alpha, gamma):
    x[0] += 1.0  # an empty population is rejected as degenerate
    dx = rhs_seir(0.0, np.array(x), beta, alpha, gamma)
    assert abs(dx.sum()) <= 1e-9 * max(1.0, np.abs(dx).max())


def test_seir_rhs_rejects_empty_population():
    with pytest.raises(DegenerateStateError):
        rhs_seir(0.0, np.zeros(4), 1.0, 0.5, 0.1)


@given(z=st.floats(-50, 50))
def test_bounded_beta_link_range(z):
    p = make_problem("seir_waves", beta_bounded=True)
    assert 0.0 <= beta_link(p, z) <= 3.0
    assert beta_link(make_problem("seir_waves"), z) == pytest.approx(math.exp(z))


def test_quadratic_ude_is_linear_growth_minus_network(quad):
    problem, space = quad
    field = compose_ude_rhs(problem, space)
    theta = np.zeros(space.total_dim)  # alpha = exp(0) = 1, network output 0
    assert field(0.0, np.array([0.3]), theta) == pytest.approx([0.3])
    with pytest.raises(ConfigError):
        field.beta(0.0, theta)
