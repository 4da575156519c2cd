import numpy as np
import pytest

from bhcp.forward import ForwardConfig
from bhcp.grid import make_grid
from bhcp.observe import uniform_sensors
from bhcp.operators import Coefficients, assemble
from bhcp.presets import product_of_sines

PI = np.pi


@pytest.fixture(scope="session")
def unit_square_small():
    """9-node-per-axis grid on [0, pi]^2 with its heat operator (49 interior)."""
    grid = make_grid(2, [[0, PI], [0, PI]], 9)
    op = assemble(grid, Coefficients.constant(grid, 1.0, 0.0))
    cfg = ForwardConfig(op, T=0.1, dt=5e-3)
    sensors = uniform_sensors(grid, 4)
    return grid, op, cfg, sensors


@pytest.fixture(scope="session")
def smooth_case():
    """Reduced version of the smooth benchmark: 41 nodes, 20x20 sensors."""
    grid = make_grid(2, [[0, PI], [0, PI]], 41)
    op = assemble(grid, Coefficients.constant(grid, 1.0, 0.0))
    cfg = ForwardConfig(op, T=0.1, dt=1e-3)
    sensors = uniform_sensors(grid, 20)
    f_star = product_of_sines(grid)
    return grid, op, cfg, sensors, f_star
