"""Structured rectangular grids, nodal fields, and discrete norms.

Nodes are enumerated lexicographically by axis (the last axis varies
fastest, C order), so every dump and sparse operator built on a grid is
reproducible bit-for-bit. All quadrature is trapezoidal on the nodes,
which matches the accuracy order of piecewise-linear elements.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._io import read_csv, write_csv
from ._validation import as_float_array, check_same_grid, require

__all__ = [
    "Grid",
    "Field",
    "make_grid",
    "l2_norm",
    "h2_seminorm_discrete",
    "h2_norm_discrete",
    "save_field",
    "load_field",
]


@dataclass(frozen=True)
class Grid:
    """Axis-aligned rectangular grid on [lower, upper] with uniform spacing.

    shape counts nodes per axis, boundary included; spacing is
    h[ax] = (upper[ax] - lower[ax]) / (shape[ax] - 1).
    Immutable and hashable; safe to share across parallel workers.
    """

    dim: int
    lower: tuple
    upper: tuple
    shape: tuple

    def __post_init__(self):
        require(self.dim in (1, 2), f"dim must be 1 or 2, got {self.dim}")
        require(
            len(self.lower) == len(self.upper) == len(self.shape) == self.dim,
            "bounds/shape length must match dim",
        )
        for lo, up, n in zip(self.lower, self.upper, self.shape):
            require(up > lo, f"degenerate bounds [{lo}, {up}]")
            require(int(n) >= 3, f"need at least 3 nodes per axis, got {n}")

    @property
    def h(self):
        return tuple(
            (u - l) / (n - 1) for l, u, n in zip(self.lower, self.upper, self.shape)
        )

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    @property
    def interior_shape(self):
        return tuple(n - 2 for n in self.shape)

    @property
    def n_interior(self):
        return int(np.prod(self.interior_shape))

    @property
    def lengths(self):
        return tuple(u - l for l, u in zip(self.lower, self.upper))

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    def axes(self):
        """Per-axis node coordinates."""
        return [
            np.linspace(lo, up, n)
            for lo, up, n in zip(self.lower, self.upper, self.shape)
        ]

    def nodes(self):
        """(n_nodes, dim) coordinates in enumeration order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def interior_mask(self):
        mask = np.ones(self.shape, dtype=bool)
        for ax in range(self.dim):
            sl = [slice(None)] * self.dim
            for edge in (0, -1):
                sl[ax] = edge
                mask[tuple(sl)] = False
        return mask.ravel()

    @cached_property
    def interior_index(self):
        """Flattened node indices of interior nodes, in enumeration order."""
        return np.flatnonzero(self.interior_mask)

    def restrict(self, values):
        """Full nodal values -> interior vector."""
        return np.asarray(values)[self.interior_index]

    def extend(self, interior_values):
        """Interior vector -> full nodal values with zero boundary."""
        out = np.zeros(self.n_nodes)
        out[self.interior_index] = interior_values
        return out

    @cached_property
    def quad_weights(self):
        """Trapezoidal quadrature weight per node (tensor product)."""
        ws = []
        for hax, n in zip(self.h, self.shape):
            w = np.full(n, hax)
            w[0] = w[-1] = hax / 2.0
            ws.append(w)
        w = ws[0]
        for ax in range(1, self.dim):
            w = np.multiply.outer(w, ws[ax])
        return w.ravel()


@dataclass(frozen=True)
class Field:
    """Real-valued function sampled on the nodes of a grid.

    Values are stored flattened in node enumeration order and are read-only.
    """

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = as_float_array(self.values, "field values", ndim=1)
        require(
            vals.shape[0] == self.grid.n_nodes,
            f"expected {self.grid.n_nodes} values, got {vals.shape[0]}",
        )
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.n_nodes))

    @classmethod
    def from_function(cls, grid, fn):
        """Sample fn(x) (1D) or fn(x, y) (2D) on the nodes."""
        pts = grid.nodes()
        return cls(grid, fn(*[pts[:, ax] for ax in range(grid.dim)]))

    def reshaped(self):
        return self.values.reshape(self.grid.shape)

    def __add__(self, other):
        check_same_grid(self, other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other):
        check_same_grid(self, other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return Field(self.grid, self.values * float(scalar))

    __rmul__ = __mul__


def make_grid(dim, bounds, nodes_per_axis):
    """Build a grid; bounds is (lo, hi) in 1D or a pair sequence in 2D."""
    dim = int(dim)
    require(dim in (1, 2), f"dim must be 1 or 2, got {dim}")
    bounds = np.asarray(bounds, dtype=float)
    if dim == 1:
        bounds = bounds.reshape(1, 2)
    require(bounds.shape == (dim, 2), f"bounds must be {dim} (lo, hi) pairs")
    if np.isscalar(nodes_per_axis) or np.ndim(nodes_per_axis) == 0:
        nodes = (int(nodes_per_axis),) * dim
    else:
        nodes = tuple(int(n) for n in nodes_per_axis)
    require(len(nodes) == dim, "nodes_per_axis length must match dim")
    return Grid(
        dim=dim,
        lower=tuple(bounds[:, 0]),
        upper=tuple(bounds[:, 1]),
        shape=nodes,
    )


def l2_norm(f):
    """Trapezoidal approximation of the L2 norm of a field."""
    return float(np.sqrt(np.sum(f.grid.quad_weights * f.values**2)))


def _interior_weight(grid):
    return float(np.prod(grid.h))


def h2_seminorm_discrete(f):
    """Second-order seminorm from second central differences at interior nodes.

    All axis pairs contribute, so in 2D the mixed derivative enters twice,
    matching the integrand f_xx^2 + 2 f_xy^2 + f_yy^2. Exact zero for fields
    affine in the coordinates.
    """
    g = f.grid
    v = f.reshaped()
    w = _interior_weight(g)
    if g.dim == 1:
        (hx,) = g.h
        d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / hx**2
        return float(np.sqrt(w * np.sum(d2**2)))
    hx, hy = g.h
    d2x = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / hx**2
    d2y = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / hy**2
    dxy = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4 * hx * hy)
    return float(np.sqrt(w * np.sum(d2x**2 + d2y**2 + 2 * dxy**2)))


def h2_norm_discrete(f):
    """Full discrete H2 norm: root-sum-square of l2_norm and the seminorm."""
    return float(np.sqrt(l2_norm(f) ** 2 + h2_seminorm_discrete(f) ** 2))


def save_field(f, path):
    """CSV dump with header x[,y],value, rows in node enumeration order."""
    pts = f.grid.nodes()
    header = ",".join(["x", "y"][: f.grid.dim] + ["value"])
    cols = [pts[:, ax] for ax in range(f.grid.dim)] + [f.values]
    write_csv(path, header, cols)


def load_field(path, grid=None):
    """Read a field CSV; infers the grid from coordinates unless given."""
    fields, cols = read_csv(path)
    dim = len(fields) - 1
    values = cols[-1]
    if grid is None:
        axes = [np.unique(cols[ax]) for ax in range(dim)]
        shape = tuple(len(a) for a in axes)
        for a in axes:
            require(len(a) >= 3, "too few distinct coordinates to infer a grid")
            steps = np.diff(a)
            require(
                np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12),
                "non-uniform coordinates in field CSV",
            )
        grid = Grid(
            dim=dim,
            lower=tuple(float(a[0]) for a in axes),
            upper=tuple(float(a[-1]) for a in axes),
            shape=shape,
        )
    require(len(values) == grid.n_nodes, "field CSV size does not match grid")
    return Field(grid, values)
