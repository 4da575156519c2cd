"""Input validation helpers shared across the package."""

import numpy as np


def require(condition, message, exc=ValueError):
    if not condition:
        raise exc(message)


def as_float_array(x, name, ndim=None):
    arr = np.asarray(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_grid(a, b, what="fields"):
    if a.grid != b.grid:
        raise ValueError(f"{what} live on different grids and cannot be combined")


def coords_to_node_index(grid, coords, tol=1e-9):
    """Map coordinates to flattened node indices, erroring off-node points.

    tol is relative to the grid spacing on each axis.
    """
    coords = np.atleast_2d(as_float_array(coords, "coords"))
    if coords.shape[1] != grid.dim:
        raise ValueError(f"expected {grid.dim}-column coordinates, got {coords.shape[1]}")
    idx_per_axis = []
    for ax in range(grid.dim):
        pos = (coords[:, ax] - grid.lower[ax]) / grid.h[ax]
        nearest = np.rint(pos)
        if np.any(np.abs(pos - nearest) > tol) or np.any(nearest < 0) or np.any(
            nearest > grid.shape[ax] - 1
        ):
            bad = int(np.argmax(np.abs(pos - nearest)))
            raise ValueError(
                f"point {tuple(coords[bad])} does not lie on a grid node (axis {ax})"
            )
        idx_per_axis.append(nearest.astype(int))
    flat = idx_per_axis[0]
    for ax in range(1, grid.dim):
        flat = flat * grid.shape[ax] + idx_per_axis[ax]
    return flat
