"""Named initial-condition presets for experiments and the CLI."""

import numpy as np

from ._validation import require
from .grid import Field, load_field

__all__ = ["product_of_sines", "a_shape_indicator", "initial_condition"]


def product_of_sines(grid, amplitude=1.0, frequency=2):
    """amplitude * prod_axes sin(frequency * pi * (x - lo) / L); the classic
    smooth test initial state (frequency 2 on [0, pi]^2 gives sin(2x)sin(2y))."""
    k = int(frequency)

    def fn(*coords):
        out = np.full_like(coords[0], float(amplitude))
        for ax, x in enumerate(coords):
            L = grid.upper[ax] - grid.lower[ax]
            out = out * np.sin(k * np.pi * (x - grid.lower[ax]) / L)
        return out

    return Field.from_function(grid, fn)


# Letter-A geometry on the unit square, scaled to the domain: two vertical
# legs and a mid-height crossbar. Exact rectangles, so the preset is
# reproducible; the apex is left open, which identification-style checks
# tolerate.
_A_RECTS = (
    ((0.30, 0.40), (0.20, 0.80)),
    ((0.60, 0.70), (0.20, 0.80)),
    ((0.30, 0.70), (0.45, 0.58)),
)


def a_shape_indicator(grid, amplitude=1.0):
    """Indicator of a blocky letter A (union of three axis-aligned rectangles).

    Discontinuous initial data with a slowly decaying spectrum; the stress
    case for the inversion."""
    require(grid.dim == 2, "the A-shape preset is two-dimensional")
    Lx = grid.upper[0] - grid.lower[0]
    Ly = grid.upper[1] - grid.lower[1]

    def fn(x, y):
        u = (x - grid.lower[0]) / Lx
        v = (y - grid.lower[1]) / Ly
        inside = np.zeros_like(x, dtype=bool)
        for (ux0, ux1), (vy0, vy1) in _A_RECTS:
            inside |= (u >= ux0) & (u <= ux1) & (v >= vy0) & (v <= vy1)
        return np.where(inside, float(amplitude), 0.0)

    return Field.from_function(grid, fn)


def initial_condition(grid, spec):
    """Resolve an initial-condition spec dict to a field.

    Accepts {"preset": "product_of_sines", "amplitude": ..., "frequency": ...},
    {"preset": "a_shape", "amplitude": ...}, or {"csv": path}.
    """
    require(isinstance(spec, dict), "initial-condition spec must be a mapping")
    if "csv" in spec:
        return load_field(spec["csv"], grid=grid)
    preset = spec.get("preset")
    if preset == "product_of_sines":
        return product_of_sines(
            grid,
            amplitude=float(spec.get("amplitude", 1.0)),
            frequency=int(spec.get("frequency", 2)),
        )
    if preset == "a_shape":
        return a_shape_indicator(grid, amplitude=float(spec.get("amplitude", 1.0)))
    raise ValueError(f"unknown initial-condition preset {preset!r}")
