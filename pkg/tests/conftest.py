import numpy as np
import pytest

from subfault.harness import demo_system
from subfault.sysgen import fault_signal, simulate, white_input


@pytest.fixture(scope="session")
def demo():
    """The bundled three-state system and its fault pair."""
    return demo_system()


@pytest.fixture(scope="session")
def demo_run(demo):
    """Seeded faulted run of the demo system: (sys, fault, x0, u, v, y, x)."""
    sys, fault = demo
    x0 = np.random.default_rng([20240, 4]).standard_normal(sys.n_x)
    u = white_input(sys.n_u, 1000, seed=[20240, 1])
    v = fault_signal("v1", 1000)
    y, x = simulate(sys, fault, x0, u, v)
    return sys, fault, x0, u, v, y, x
