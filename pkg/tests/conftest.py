import numpy as np
import pytest

from rtgeo.charts import Chart, connection_field
from rtgeo.harness import Scenario, generate_scenario, load_config


@pytest.fixture(scope="session")
def unit_chart():
    return Chart((0.0, 0.0), (1.0, 1.0), (33, 33))


@pytest.fixture(scope="session")
def unit_chart_65():
    return Chart((0.0, 0.0), (1.0, 1.0), (65, 65))


def quadratic_jacobian(chart):
    X = chart.nodes
    J = np.zeros(chart.res + (2, 2))
    J[..., 0, 0] = 1.0
    J[..., 1, 1] = 1.0
    J[..., 1, 0] = X[..., 0]
    return J


def trig_gradient_jacobian(chart, amp=(0.04, 0.05)):
    """Gradient rows of a trigonometric potential: exactly curl-free samples."""
    X = chart.nodes
    u = X.copy()
    u[..., 0] = X[..., 0] + amp[0] * np.sin(2.1 * X[..., 0] + 0.3) * np.cos(1.7 * X[..., 1])
    u[..., 1] = X[..., 1] + amp[1] * np.cos(1.3 * X[..., 0]) * np.sin(1.9 * X[..., 1] + 0.5)
    J = np.stack(
        [np.stack([chart.deriv(u[..., m], nu) for nu in range(2)], axis=-1) for m in range(2)],
        axis=-2,
    )
    return J, u


def smooth_connection(chart, amp=0.3):
    X = chart.nodes
    vals = np.zeros(chart.res + (2, 2, 2))
    for a in range(2):
        for b in range(2):
            for c in range(2):
                vals[..., a, b, c] = amp * np.sin((1 + a) * X[..., 0] + 0.5 * (1 + b) * X[..., 1] + 0.2 * c)
    return connection_field(chart, vals)


def flat_disguise_connection(chart):
    vals = np.zeros(chart.res + (2, 2, 2))
    vals[..., 1, 0, 0] = 1.0
    return connection_field(chart, vals)


@pytest.fixture(scope="session")
def flat_gen():
    scn, _ = load_config("configs/flat_disguise.cfg")
    return generate_scenario(scn)


@pytest.fixture(scope="session")
def rough_gen():
    scn, _ = load_config("configs/rough_beta06.cfg")
    return generate_scenario(scn)


@pytest.fixture(scope="session")
def sphere_gen():
    scn, _ = load_config("configs/sphere.cfg")
    return generate_scenario(scn)


@pytest.fixture(scope="session")
def rough_rt_state(rough_gen):
    from rtgeo.rt_solver import RTConfig, solve_reduced_rt

    return solve_reduced_rt(rough_gen.conn_x, RTConfig())


@pytest.fixture(scope="session")
def control_gen():
    scn = Scenario(
        name="negctl",
        hidden="sphere",
        map_kind="quadratic",
        shear=0.2,
        chart_lo=(0.7853981633974483, -0.15),
        chart_hi=(2.356194490192345, 1.15),
    )
    return generate_scenario(scn)
