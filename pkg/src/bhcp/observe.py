"""Sensor layouts, the empirical inner product, and noisy synthetic data.

The default layout is the cell-centered (midpoint) lattice: per_axis points
per axis at odd multiples of half the lattice spacing, with uniform weights
w_i^2 = |domain| / n. The weights then sum exactly to the domain volume and
the empirical norm is a composite midpoint rule, so it approximates the L2
norm to second order in the fill distance.

Noise streams are counter-based (Philox) and keyed by (seed, replication),
so Monte Carlo replications are reproducible independently of execution
order or worker count.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ._io import read_csv, read_json, write_csv, write_json
from ._validation import as_float_array, coords_to_node_index, require
from .forward import forward_solve

__all__ = [
    "SensorSet",
    "NoiseModel",
    "Observation",
    "uniform_sensors",
    "empirical_inner",
    "empirical_norm",
    "observe",
    "save_observation",
    "load_observation",
]


@dataclass(frozen=True)
class SensorSet:
    """Sensor locations on grid nodes with quadrature weights w_i^2."""

    grid: object
    coords: np.ndarray = field(repr=False)
    node_index: np.ndarray = field(repr=False)
    w2: np.ndarray = field(repr=False)

    def __post_init__(self):
        require(len(self.coords) == len(self.node_index) == len(self.w2), "inconsistent sensor arrays")
        require(float(np.min(self.w2)) > 0.0, "sensor weights must be positive")

    @property
    def n(self):
        return len(self.node_index)

    @property
    def interior_positions(self):
        """Index of each sensor in the interior vector; -1 for boundary nodes."""
        interior = self.grid.interior_index
        pos = np.searchsorted(interior, self.node_index)
        pos = np.clip(pos, 0, len(interior) - 1)
        hit = interior[pos] == self.node_index
        out = np.where(hit, pos, -1)
        return out

    @property
    def fill_distances(self):
        """(d_max, d_min): probed covering radius and minimal separation.

        d_max is probed on the grid nodes, so it is exact up to the grid
        resolution; the realized ratio is recorded, not enforced.
        """
        tree = cKDTree(self.coords)
        dmax = float(tree.query(self.grid.nodes())[0].max())
        if self.n < 2:
            return dmax, np.inf
        dmin = float(tree.query(self.coords, k=2)[0][:, 1].min())
        return dmax, dmin

    def sample(self, f):
        """Values of a field at the sensor nodes."""
        return f.values[self.node_index]


def uniform_sensors(grid, per_axis):
    """Equispaced cell-centered sensor lattice, a subset of the grid nodes.

    Positions on each axis are lower + (2i-1) * L / (2 p), i = 1..p, which
    requires (nodes_per_axis - 1) to be divisible by 2 * per_axis. Weights
    are uniform, w_i^2 = |domain| / n.
    """
    p = int(per_axis)
    require(p >= 2, f"per_axis must be >= 2, got {p}")
    axes = []
    for ax in range(grid.dim):
        intervals = grid.shape[ax] - 1
        require(
            intervals % (2 * p) == 0,
            f"sensor lattice (per_axis={p}) is not aligned with grid nodes on "
            f"axis {ax}: {intervals} intervals not divisible by {2 * p}",
        )
        L = grid.upper[ax] - grid.lower[ax]
        axes.append(grid.lower[ax] + (2 * np.arange(1, p + 1) - 1) * L / (2 * p))
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=1)
    node_index = coords_to_node_index(grid, coords)
    n = coords.shape[0]
    w2 = np.full(n, grid.volume / n)
    return SensorSet(grid=grid, coords=coords, node_index=node_index, w2=w2)


def empirical_inner(sensors, u_values, v_values):
    """(u, v)_n = sum_i w_i^2 u_i v_i over the sensor set."""
    u = as_float_array(u_values, "u values", ndim=1)
    v = as_float_array(v_values, "v values", ndim=1)
    require(len(u) == sensors.n and len(v) == sensors.n, "value length != sensor count")
    return float(np.sum(sensors.w2 * u * v))


def empirical_norm(sensors, u_values):
    return float(np.sqrt(empirical_inner(sensors, u_values, u_values)))


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean i.i.d. sensor noise with standard deviation sigma.

    kind 'gaussian' | 'uniform' | 'rademacher'; the bounded kinds are scaled
    so their standard deviation equals sigma, making all three sub-Gaussian
    with parameter proportional to sigma.
    """

    kind: str = "gaussian"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        require(self.kind in ("gaussian", "uniform", "rademacher"), f"unknown noise kind {self.kind!r}")
        require(self.sigma >= 0.0, "sigma must be nonnegative")

    def generator(self, rep=0):
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(rep),))
        return np.random.Generator(np.random.Philox(ss))

    def draw(self, n, rep=0):
        rng = self.generator(rep)
        if self.kind == "gaussian":
            return rng.normal(0.0, self.sigma, size=n) if self.sigma > 0 else np.zeros(n)
        if self.kind == "uniform":
            half = np.sqrt(3.0) * self.sigma
            return rng.uniform(-half, half, size=n)
        return self.sigma * (2.0 * rng.integers(0, 2, size=n) - 1.0)

    def as_dict(self):
        return {"kind": self.kind, "sigma": self.sigma, "seed": int(self.seed)}


@dataclass(frozen=True)
class Observation:
    """Sensor readings m_i with their provenance."""

    sensors: SensorSet
    values: np.ndarray = field(repr=False)
    provenance: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        vals = as_float_array(self.values, "observed values", ndim=1)
        require(len(vals) == self.sensors.n, "observation length != sensor count")
        object.__setattr__(self, "values", vals)

    @property
    def n(self):
        return self.sensors.n


def _field_digest(f):
    return hashlib.sha256(np.ascontiguousarray(f.values).tobytes()).hexdigest()[:16]


def observe(cfg, f_star, sensors, noise, rep=0):
    """Noisy terminal readings m_i = u(x_i, T) + e_i for a true initial field.

    Deterministic given (config, noise seed, rep); replications index
    independent noise streams.
    """
    require(sensors.grid == cfg.grid, "sensors live on a different grid")
    u_T = forward_solve(cfg, f_star, cfg.T)
    clean = sensors.sample(u_T)
    values = clean + noise.draw(sensors.n, rep=rep)
    provenance = {
        "true_field": _field_digest(f_star),
        "noise": noise.as_dict(),
        "replication": int(rep),
    }
    return Observation(sensors=sensors, values=values, provenance=provenance)


def save_observation(obs, csv_path, json_path):
    """CSV x[,y],m plus a JSON sidecar with the noise metadata."""
    dim = obs.sensors.grid.dim
    header = ",".join(["x", "y"][:dim] + ["m"])
    cols = [obs.sensors.coords[:, ax] for ax in range(dim)] + [obs.values]
    write_csv(csv_path, header, cols)
    meta = dict(obs.provenance.get("noise", {}))
    meta.update(
        {
            "n": obs.n,
            "w2": float(obs.sensors.w2[0]),
            "provenance": obs.provenance,
        }
    )
    write_json(json_path, meta)


def load_observation(grid, csv_path, json_path=None):
    """Rebuild an Observation whose sensors lie on nodes of the given grid."""
    fields, cols = read_csv(csv_path)
    dim = len(fields) - 1
    require(dim == grid.dim, "observation dimensionality != grid dim")
    coords = np.stack(cols[:dim], axis=1)
    values = cols[-1]
    node_index = coords_to_node_index(grid, coords)
    meta = read_json(json_path) if json_path else {}
    n = len(values)
    w2 = np.full(n, float(meta.get("w2", grid.volume / n)))
    sensors = SensorSet(grid=grid, coords=coords, node_index=node_index, w2=w2)
    return Observation(sensors=sensors, values=values, provenance=meta.get("provenance", {}))
