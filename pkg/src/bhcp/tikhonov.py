"""Regularized least-squares inversion of terminal sensor data.

The functional is J[f] = ||F_T f - m||_n^2 + lambda ||f||^2 with the discrete
L2 (mass) norm in the penalty. Its exact gradient is 2 (P_T*(F_T f - m) +
lambda f); stationarity gives the normal equations (P_T* F_T + lambda I) f =
P_T* m, which conjugate gradient solves in the mass inner product. Plain
gradient descent on J is kept as a fidelity option and must agree with the
CG limit; a dense column-built solve provides an independent oracle on
small grids.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._io import write_json
from ._validation import require
from .grid import Field, save_field
from .observe import empirical_norm

__all__ = [
    "TikhonovProblem",
    "InversionResult",
    "evaluate_J",
    "gradient_J",
    "minimize",
    "direct_solve_small",
    "DenseNormalModel",
    "save_inversion",
]

_DIRECT_CAP = 500


@dataclass(frozen=True)
class TikhonovProblem:
    """Forward configuration, observation, and regularization weight."""

    cfg: object
    observation: object
    lam: float

    def __post_init__(self):
        require(self.lam > 0.0, f"lambda must be positive, got {self.lam}")
        require(
            self.observation.sensors.grid == self.cfg.grid,
            "observation sensors incompatible with the forward grid",
        )

    @property
    def sensors(self):
        return self.observation.sensors

    @property
    def m(self):
        return self.observation.values


@dataclass(frozen=True)
class InversionResult:
    """Recovered field with misfit and iteration diagnostics."""

    f: Field
    misfit: float
    J: float
    iterations: int
    history: np.ndarray = field(repr=False)
    converged: bool = True
    method: str = "cg_normal"
    stop_reason: str = "tolerance"


def _sample_terminal(problem, f_int):
    """Sensor samples of F_T applied to an interior vector (or stacked columns)."""
    u = problem.cfg.propagate(f_int, problem.cfg.steps)
    pos = problem.sensors.interior_positions
    out_shape = (problem.sensors.n,) + u.shape[1:]
    out = np.zeros(out_shape)
    ok = pos >= 0
    out[ok] = u[pos[ok]]
    return out

def _scatter_adjoint(problem, r):
    """P_T* r as an interior vector."""
    sensors = problem.sensors
    scattered = np.zeros(problem.cfg.grid.n_interior)
    pos = sensors.interior_positions
    ok = pos >= 0
    np.add.at(scattered, pos[ok], sensors.w2[ok] * np.asarray(r)[ok])
    v = problem.cfg.operator.mass_solve(scattered)
    return problem.cfg.propagate_adjoint(v, problem.cfg.steps)


def _rhs(problem):
    return _scatter_adjoint(problem, problem.m)


def _normal_apply(problem, f_int):
    """(P_T* F_T + lambda I) applied to an interior vector."""
    return _scatter_adjoint(problem, _sample_terminal(problem, f_int)) + problem.lam * f_int


def evaluate_J(problem, f):
    """J[f] = ||F_T f - m||_n^2 + lambda ||f||^2; J[0] = ||m||_n^2."""
    f_int = problem.cfg.grid.restrict(f.values)
    resid = _sample_terminal(problem, f_int) - problem.m
    misfit2 = float(np.sum(problem.sensors.w2 * resid**2))
    op = problem.cfg.operator
    return misfit2 + problem.lam * op.mass_dot(f_int, f_int)


def gradient_J(problem, f):
    """Exact gradient of J in the discrete L2 inner product.

    The squared data and penalty terms each contribute their factor two:
    dJ[f] = 2 (P_T*(F_T f - m) + lambda f).
    """
    grid = problem.cfg.grid
    f_int = grid.restrict(f.values)
    resid = _sample_terminal(problem, f_int) - problem.m
    g = 2.0 * (_scatter_adjoint(problem, resid) + problem.lam * f_int)
    return Field(grid, grid.extend(g))


def _misfit_of(problem, f_int):
    resid = _sample_terminal(problem, f_int) - problem.m
    return float(np.sqrt(np.sum(problem.sensors.w2 * resid**2)))


def _estimate_normal_norm(problem, iters=20):
    """Spectral norm of P_T* F_T from a fixed-seed power iteration."""
    rng = np.random.Generator(np.random.Philox(20210405))
    op = problem.cfg.operator
    v = rng.standard_normal(problem.cfg.grid.n_interior)
    v /= np.sqrt(op.mass_dot(v, v))
    est = 0.0
    for _ in range(iters):
        w = _scatter_adjoint(problem, _sample_terminal(problem, v))
        est = op.mass_dot(v, w)
        nrm = np.sqrt(op.mass_dot(w, w))
        if nrm == 0.0:
            return 0.0
        v = w / nrm
    return float(max(est, 0.0))


def _result(problem, x, history, iterations, converged, method, reason):
    grid = problem.cfg.grid
    f = Field(grid, grid.extend(x))
    return InversionResult(
        f=f,
        misfit=_misfit_of(problem, x),
        J=evaluate_J(problem, f),
        iterations=iterations,
        history=np.asarray(history),
        converged=converged,
        method=method,
        stop_reason=reason,
    )


def _minimize_cg(problem, tol, max_iter, f0_int):
    op = problem.cfg.operator
    dot = op.mass_dot
    b = _rhs(problem)
    m_norm2 = empirical_norm(problem.sensors, problem.m) ** 2
    b_norm = np.sqrt(dot(b, b))
    x = f0_int.copy()
    if b_norm == 0.0 and not np.any(x):
        return _result(problem, x, [m_norm2], 0, True, "cg_normal", "zero data")
    r = b - _normal_apply(problem, x)
    p = r.copy()
    rho = dot(r, r)
    history = [m_norm2 - dot(x, b) - dot(x, r)]
    for k in range(1, max_iter + 1):
        q = _normal_apply(problem, p)
        alpha = rho / dot(p, q)
        x += alpha * p
        r -= alpha * q
        rho_new = dot(r, r)
        history.append(m_norm2 - dot(x, b) - dot(x, r))
        if np.sqrt(rho_new) <= tol * b_norm:
            return _result(problem, x, history, k, True, "cg_normal", "tolerance")
        p = r + (rho_new / rho) * p
        rho = rho_new
    return _result(problem, x, history, max_iter, False, "cg_normal", "max_iter")


def _minimize_gd(problem, tol, max_iter, f0_int):
    op = problem.cfg.operator
    dot = op.mass_dot
    lam = problem.lam
    b = _rhs(problem)
    b_norm = np.sqrt(dot(b, b))
    m_norm2 = empirical_norm(problem.sensors, problem.m) ** 2
    x = f0_int.copy()
    if b_norm == 0.0 and not np.any(x):
        return _result(problem, x, [m_norm2], 0, True, "gradient_descent", "zero data")
    beta = 1.0 / (lam + _estimate_normal_norm(problem))

    def j_and_grad(v):
        resid = _sample_terminal(problem, v) - problem.m
        jval = float(np.sum(problem.sensors.w2 * resid**2)) + lam * dot(v, v)
        return jval, resid

    J, resid = j_and_grad(x)
    history = [J]
    for k in range(1, max_iter + 1):
        step = _scatter_adjoint(problem, resid) + lam * x
        gnorm = np.sqrt(dot(step, step))
        if gnorm <= tol * b_norm:
            return _result(problem, x, history, k - 1, True, "gradient_descent", "tolerance")
        while True:
            x_new = x - beta * step
            J_new, resid_new = j_and_grad(x_new)
            if J_new <= J:
                break
            beta *= 0.5
            require(beta > 1e-300, "gradient descent step size underflow", RuntimeError)
        x, J, resid = x_new, J_new, resid_new
        history.append(J)
    return _result(problem, x, history, max_iter, False, "gradient_descent", "max_iter")


def minimize(problem, method="cg_normal", tol=1e-8, max_iter=None, f0=None):
    """Minimize J by conjugate gradient on the normal equations or by descent.

    Stops when the normal-equation residual (equivalently the gradient)
    drops below tol relative to ||P_T* m||, or at max_iter (reported in the
    result, not raised). The history records J per iterate and is
    nonincreasing for both methods.
    """
    require(method in ("cg_normal", "gradient_descent"), f"unknown method {method!r}")
    require(tol > 0.0, "tol must be positive")
    if max_iter is None:
        max_iter = 500 if method == "cg_normal" else 5000
    require(max_iter >= 1, "max_iter must be >= 1")
    grid = problem.cfg.grid
    f0_int = np.zeros(grid.n_interior) if f0 is None else grid.restrict(f0.values)
    if method == "cg_normal":
        return _minimize_cg(problem, tol, max_iter, f0_int)
    return _minimize_gd(problem, tol, max_iter, f0_int)


def _dense_terminal_matrix(problem):
    """Dense n x N matrix of sensor samples of F_T, built column by column."""
    n_int = problem.cfg.grid.n_interior
    return _sample_terminal(problem, np.eye(n_int))


def direct_solve_small(problem):
    """Dense-factorization oracle for minimize on small grids.

    Builds the sampled forward matrix column by column and solves the
    symmetric form of the normal equations (S^T W S + lambda M) f = S^T W m.
    """
    n_int = problem.cfg.grid.n_interior
    require(
        n_int <= _DIRECT_CAP,
        f"direct solve capped at {_DIRECT_CAP} interior nodes, got {n_int}",
    )
    S = _dense_terminal_matrix(problem)
    w2 = problem.sensors.w2
    A = S.T @ (w2[:, None] * S) + problem.lam * problem.cfg.operator.mass.toarray()
    rhs = S.T @ (w2 * problem.m)
    f_int = scipy.linalg.solve(A, rhs, assume_a="pos")
    grid = problem.cfg.grid
    return Field(grid, grid.extend(f_int))


class DenseNormalModel:
    """Diagonalized dense model of the sampled forward map.

    For repeated inversions of one problem family (lambda sweeps, Monte
    Carlo replications) the generalized eigenbasis of (stiffness, mass)
    gives the exact backward-Euler propagator, and a second symmetric
    eigensolve diagonalizes the normal operator. Every subsequent solve is
    then a pair of dense matrix-vector products. Results match minimize to
    solver tolerance; the column-built direct_solve_small stays the
    independent oracle.
    """

    def __init__(self, cfg, sensors, max_interior=4000):
        op = cfg.operator
        n_int = op.n_interior
        require(
            n_int <= max_interior,
            f"dense model capped at {max_interior} interior nodes, got {n_int}",
        )
        self.cfg = cfg
        self.sensors = sensors
        self.w2 = sensors.w2
        Kd = op.stiffness.toarray()
        Md = op.mass.toarray()
        mu, phi = scipy.linalg.eigh(Kd, Md)
        decay = (1.0 + cfg.dt * mu) ** (-float(cfg.steps))
        pos = sensors.interior_positions
        samples = np.zeros((sensors.n, n_int))
        ok = pos >= 0
        samples[ok] = phi[pos[ok], :]
        S = samples * decay[None, :]
        Ghat = S.T @ (self.w2[:, None] * S)
        Ghat = 0.5 * (Ghat + Ghat.T)
        theta, Q = scipy.linalg.eigh(Ghat)
        self.theta = np.clip(theta, 0.0, None)
        self.V = phi @ Q
        self.B = S @ Q  # sensor samples of the V basis at time T
        self._MV_T = (op.mass @ self.V).T
        self.mu = mu
        self.mode_decay = decay

    @property
    def n_interior(self):
        return self.V.shape[0]

    def coords(self, f_int):
        """Coordinates of an interior vector in the M-orthonormal eigenbasis."""
        return self._MV_T @ f_int

    def data_coords(self, m):
        """Right-hand side coordinates of P_T* m."""
        return self.B.T @ (self.w2 * np.asarray(m))

    def solve_coords(self, m, lam):
        return self.data_coords(m) / (self.theta + lam)

    def solve(self, m, lam):
        """Interior minimizer of J for the given data and lambda."""
        return self.V @ self.solve_coords(m, lam)

    def terminal_values(self, y):
        """Sensor samples of F_T applied to the field with coordinates y."""
        return self.B @ y


def save_inversion(result, lam, csv_path, json_path):
    """Recovered field as CSV plus a JSON record of the solve."""
    save_field(result.f, csv_path)
    write_json(
        json_path,
        {
            "lambda": float(lam),
            "iterations": int(result.iterations),
            "misfit": float(result.misfit),
            "J": float(result.J),
            "converged": bool(result.converged),
            "method": result.method,
            "stop_reason": result.stop_reason,
        },
    )
