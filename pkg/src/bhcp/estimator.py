"""Scikit-learn style front end for the inversion.

TikhonovInverter.fit(X, y) takes sensor coordinates and terminal readings
and recovers the initial temperature field; predict(X) returns the fitted
terminal values at node coordinates, so the estimator composes with the
usual scikit-learn model-selection machinery (clone, get_params, scoring).
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_float_array, coords_to_node_index, require
from .adapt import adapt_lambda
from .forward import ForwardConfig, forward_solve
from .grid import Field, make_grid
from .observe import Observation, SensorSet
from .operators import Coefficients, assemble
from .tikhonov import TikhonovProblem, minimize

__all__ = ["TikhonovInverter"]


class TikhonovInverter(BaseEstimator, RegressorMixin):
    """Recover an initial field from noisy terminal point observations.

    Parameters mirror the library defaults: a rectangular domain with given
    node counts, constant coefficients, backward-Euler stepping, and either
    a fixed regularization weight or the self-adaptive fixed-point rule.

    Attributes set by fit: initial_field_ (the recovered Field), lambda_,
    result_ (solver record), trace_ (adaptive mode only), n_iter_.
    """

    def __init__(
        self,
        bounds=((0.0, np.pi), (0.0, np.pi)),
        nodes_per_axis=41,
        diffusivity=1.0,
        reaction=0.0,
        final_time=0.1,
        dt=1e-3,
        lam=1e-3,
        mode="fixed",
        method="cg_normal",
        tol=1e-8,
        max_iter=None,
        tol_lambda=1e-3,
        max_outer=25,
        lambda0=None,
        mass="lumped",
    ):
        self.bounds = bounds
        self.nodes_per_axis = nodes_per_axis
        self.diffusivity = diffusivity
        self.reaction = reaction
        self.final_time = final_time
        self.dt = dt
        self.lam = lam
        self.mode = mode
        self.method = method
        self.tol = tol
        self.max_iter = max_iter
        self.tol_lambda = tol_lambda
        self.max_outer = max_outer
        self.lambda0 = lambda0
        self.mass = mass

    def _build(self):
        bounds = np.asarray(self.bounds, dtype=float)
        if bounds.ndim == 1:
            bounds = bounds.reshape(1, 2)
        dim = bounds.shape[0]
        grid = make_grid(dim, bounds, self.nodes_per_axis)
        coeff = Coefficients.constant(grid, self.diffusivity, self.reaction)
        op = assemble(grid, coeff, mass=self.mass)
        cfg = ForwardConfig(op, T=self.final_time, dt=self.dt)
        return grid, cfg

    def fit(self, X, y):
        """Invert terminal readings y observed at node coordinates X."""
        require(self.mode in ("fixed", "adaptive"), f"unknown mode {self.mode!r}")
        X = np.atleast_2d(as_float_array(X, "X"))
        y = as_float_array(y, "y", ndim=1)
        require(len(X) == len(y), "X and y lengths differ")
        grid, cfg = self._build()
        node_index = coords_to_node_index(grid, X)
        require(len(np.unique(node_index)) == len(node_index), "duplicate sensor locations")
        w2 = np.full(len(y), grid.volume / len(y))
        sensors = SensorSet(grid=grid, coords=X, node_index=node_index, w2=w2)
        obs = Observation(sensors=sensors, values=y)
        if self.mode == "adaptive":
            trace, result = adapt_lambda(
                obs,
                cfg,
                tol_lambda=self.tol_lambda,
                max_outer=self.max_outer,
                lambda0=self.lambda0,
                method=self.method,
                tol=self.tol,
                max_iter=self.max_iter,
            )
            self.trace_ = trace
            self.lambda_ = trace.final_lambda
        else:
            result = minimize(
                TikhonovProblem(cfg, obs, self.lam),
                method=self.method,
                tol=self.tol,
                max_iter=self.max_iter,
            )
            self.trace_ = None
            self.lambda_ = float(self.lam)
        self.grid_ = grid
        self.config_ = cfg
        self.sensors_ = sensors
        self.result_ = result
        self.initial_field_ = result.f
        self.n_iter_ = result.iterations
        return self

    def reconstruct(self, t=0.0):
        """Recovered state propagated to time t (a Field)."""
        check_is_fitted(self, "initial_field_")
        if t == 0.0:
            return self.initial_field_
        return forward_solve(self.config_, self.initial_field_, t)

    def predict(self, X, t=None):
        """Fitted terminal values (or values at time t) at node coordinates X."""
        check_is_fitted(self, "initial_field_")
        X = np.atleast_2d(as_float_array(X, "X"))
        node_index = coords_to_node_index(self.grid_, X)
        u = self.reconstruct(self.final_time if t is None else t)
        return u.values[node_index]
