import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from udeuq.core import make_problem, make_space
from udeuq.likelihood import NoiseModel, generate_dataset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion id -> (passed, detail); printed once at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def quad():
    problem = make_problem("quadratic")
    return problem, make_space(problem)


@pytest.fixture(scope="session")
def waves():
    problem = make_problem("seir_waves")
    return problem, make_space(problem)


@pytest.fixture(scope="session")
def pulse_nb():
    problem = make_problem("seir_pulse", "negbin")
    return problem, make_space(problem)


@pytest.fixture(scope="session")
def quad_data():
    return generate_dataset("quadratic", NoiseModel("gaussian", 0.05), 0)


@pytest.fixture(scope="session")
def waves_data():
    return generate_dataset("seir_waves", NoiseModel("gaussian", 0.05), 0)


@pytest.fixture(scope="session")
def pulse_nb_data():
    return generate_dataset("seir_pulse", NoiseModel("negbin", 2.2), 0)


def random_theta(space, seed, net_scale=0.3):
    """Moderate raw vector: mechanistic and noise entries near zero, small network weights."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, net_scale, space.total_dim)
