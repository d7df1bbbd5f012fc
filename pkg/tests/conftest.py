import math

import numpy as np
import pytest

from snsmem.config import build_sim_config, load_config, steady_vortex
from snsmem.memory import steady_history
from snsmem.solver import make_state
from snsmem.spaces import make_grid

# lines recorded by the acceptance suite, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid32():
    return make_grid(2 * math.pi, 32)


@pytest.fixture(scope="session")
def grid16():
    return make_grid(2 * math.pi, 16)


@pytest.fixture(scope="session")
def desk_cfg():
    return load_config({"integration": {"dt": 1e-3}})


@pytest.fixture(scope="session")
def desk_sim(desk_cfg):
    return build_sim_config(desk_cfg, epsilon=0.0)


@pytest.fixture(scope="session")
def coarse_cfg():
    """Cheap settings for unit tests that integrate: dt = 0.01 and 16 ages."""
    return load_config({"integration": {"dt": 0.01, "n_nodes": 16}})


@pytest.fixture(scope="session")
def coarse_sim(coarse_cfg):
    return build_sim_config(coarse_cfg, epsilon=0.0)


@pytest.fixture
def steady_state_of():
    def build(cfg, sim):
        u = steady_vortex(cfg)
        return make_state(sim, u, steady_history(u, sim.s_nodes, sim.kernel, order=sim.quad_order))
    return build


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
