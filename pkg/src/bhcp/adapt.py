"""Self-adaptive choice of the regularization weight.

The update alternates a full inversion at the current lambda with the
fixed-point step

    lambda_new = (H_est^(d/4) * n^(-1/2) * misfit / ||f||^(1 + d/4))^(1 / (1/2 + d/8))

where H_est estimates the H2 norm of the clean terminal state from the data
alone. The estimate comes from a discrete smoothing spline on the sensor
lattice: minimize ||u - m||_n^2 + alpha * |u|_H2^2 with alpha chosen by
generalized cross-validation, then report the discrete H2 norm of the
smoothed field. Stencils at the outermost sensors use the homogeneous
boundary values of the underlying state, so the quadrature covers the whole
domain.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._io import write_csv
from ._validation import require
from .tikhonov import TikhonovProblem, minimize

__all__ = ["LambdaTrace", "estimate_h2", "lambda_step", "adapt_lambda", "save_trace"]

LAMBDA_FLOOR = 1e-14


@dataclass(frozen=True)
class LambdaTrace:
    """Record of the lambda iteration: one row per inversion."""

    lambdas: np.ndarray
    f_norms: np.ndarray
    misfits: np.ndarray
    J_values: np.ndarray
    flags: tuple
    converged: bool
    h_est: float

    def __len__(self):
        return len(self.lambdas)

    @property
    def final_lambda(self):
        return float(self.lambdas[-1])


def _axis_positions(coords, ax):
    xs = np.unique(coords[:, ax])
    steps = np.diff(xs)
    require(len(xs) >= 3, "sensor lattice too small to smooth")
    require(
        np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12),
        "sensors do not form a uniform lattice",
    )
    return xs


def _diff_matrices(xs, lo, hi):
    """First/second difference matrices and trapezoid weights on one axis.

    The lattice is interior to [lo, hi]; zero values at both ends enter the
    one-sided stencils, built from the generic nonuniform 3-point formulas.
    """
    p = len(xs)
    nodes = np.concatenate([[lo], xs, [hi]])
    D1 = np.zeros((p, p))
    D2 = np.zeros((p, p))
    for i in range(p):
        h1 = nodes[i + 1] - nodes[i]
        h2 = nodes[i + 2] - nodes[i + 1]
        cm, c0, cp = -h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))
        dm, d0, dp = 2 / (h1 * (h1 + h2)), -2 / (h1 * h2), 2 / (h2 * (h1 + h2))
        if i > 0:
            D1[i, i - 1] = cm
            D2[i, i - 1] = dm
        D1[i, i] = c0
        D2[i, i] = d0
        if i < p - 1:
            D1[i, i + 1] = cp
            D2[i, i + 1] = dp
    w = np.empty(p)
    w[:] = nodes[2:] - nodes[:-2]
    w /= 2.0
    return D1, D2, w


def _h2_forms(sensors):
    """Per-axis difference operators and weights for the sensor lattice."""
    grid = sensors.grid
    axes = []
    for ax in range(grid.dim):
        xs = _axis_positions(sensors.coords, ax)
        axes.append(_diff_matrices(xs, grid.lower[ax], grid.upper[ax]))
    shape = tuple(len(_axis_positions(sensors.coords, ax)) for ax in range(grid.dim))
    require(int(np.prod(shape)) == sensors.n, "sensors do not fill a full lattice")
    return axes, shape


def _quad_form(D, w):
    return D.T @ (w[:, None] * D)


def _penalty_matrix(axes, shape):
    """Dense matrix of the squared discrete H2 seminorm on the lattice."""
    if len(axes) == 1:
        D1, D2, w = axes[0]
        return _quad_form(D2, w)
    (D1x, D2x, wx), (D1y, D2y, wy) = axes
    K2x, K1x, Qx = _quad_form(D2x, wx), _quad_form(D1x, wx), np.diag(wx)
    K2y, K1y, Qy = _quad_form(D2y, wy), _quad_form(D1y, wy), np.diag(wy)
    return np.kron(K2x, Qy) + np.kron(Qx, K2y) + 2.0 * np.kron(K1x, K1y)


def _h2_norm_on_lattice(u, axes, shape):
    """Discrete H2 norm (L2 plus second-difference seminorm) of lattice values."""
    if len(axes) == 1:
        D1, D2, w = axes[0]
        l2 = np.sum(w * u**2)
        h2 = np.sum(w * (D2 @ u) ** 2)
        return float(np.sqrt(l2 + h2))
    (D1x, D2x, wx), (D1y, D2y, wy) = axes
    U = u.reshape(shape)
    ww = np.multiply.outer(wx, wy)
    l2 = np.sum(ww * U**2)
    h2 = (
        np.sum(ww * (D2x @ U) ** 2)
        + np.sum(ww * (U @ D2y.T) ** 2)
        + 2.0 * np.sum(ww * (D1x @ U @ D1y.T) ** 2)
    )
    return float(np.sqrt(l2 + h2))


def estimate_h2(observation, grid):
    """Data-only estimate of the H2 norm of the clean terminal state.

    Returns 0.0 for all-zero data; callers must guard the division in the
    lambda update.
    """
    sensors = observation.sensors
    require(sensors.grid == grid, "observation sensors live on a different grid")
    m = observation.values
    if not np.any(m):
        return 0.0
    axes, shape = _h2_forms(sensors)
    B = _penalty_matrix(axes, shape)
    w2 = sensors.w2
    # generalized eigenbasis of the penalty against the data weights
    theta, V = scipy.linalg.eigh(0.5 * (B + B.T), np.diag(w2))
    theta = np.clip(theta, 0.0, None)
    c = V.T @ (w2 * m)
    n = sensors.n
    theta_max = float(theta.max())
    require(theta_max > 0.0, "degenerate smoothing penalty", RuntimeError)
    alphas = np.logspace(np.log10(1e-6 / theta_max), np.log10(1e6 / theta_max), 121)
    shrink = alphas[None, :] * theta[:, None]
    shrink /= 1.0 + shrink  # (I - A_alpha) eigenvalues
    resid2 = np.sum((shrink * c[:, None]) ** 2, axis=0)
    denom = (np.sum(shrink, axis=0) / n) ** 2
    gcv = (resid2 / n) / np.maximum(denom, 1e-300)
    alpha = alphas[int(np.argmin(gcv))]
    u_hat = V @ (c / (1.0 + alpha * theta))
    return _h2_norm_on_lattice(u_hat, axes, shape)


def lambda_step(misfit, f_norm, h_est, n, d):
    """One fixed-point update of the regularization weight.

    lambda_new = (h_est^(d/4) * n^(-1/2) * misfit / f_norm^(1 + d/4))^e with
    e = 1 / (1/2 + d/8): 4/3 in two dimensions, 8/5 in one. Zero misfit maps
    to zero, which callers treat as degenerate (below the positivity floor).
    """
    require(d in (1, 2), f"d must be 1 or 2, got {d}")
    require(f_norm > 0.0, "zero iterate norm: fall back to the initial guess rule")
    require(misfit >= 0.0 and h_est >= 0.0 and n >= 1, "invalid update inputs")
    base = h_est ** (d / 4.0) * n ** (-0.5) * misfit / f_norm ** (1.0 + d / 4.0)
    return float(base ** (1.0 / (0.5 + d / 8.0)))


def default_lambda0(n, d):
    """Initial guess n^(-4/(d+4)) for the fixed-point iteration."""
    return float(n ** (-4.0 / (d + 4.0)))


def adapt_lambda(observation, cfg, tol_lambda=1e-3, max_outer=25, lambda0=None,
                 method="cg_normal", tol=1e-8, max_iter=None, h_est=None):
    """Alternate inversions with fixed-point updates until lambda settles.

    Stops when |lambda_new - lambda| <= tol_lambda * max(lambda_new, 1) or
    after max_outer inversions (reported through the converged flag, not
    raised). On convergence one extra inversion at the settled weight makes
    the returned result consistent with the final lambda. Updates that fall
    below the positivity floor are clamped and flagged; a zero iterate
    triggers a single restart from the initial guess rule.

    Returns (LambdaTrace, InversionResult).
    """
    require(tol_lambda > 0.0, "tol_lambda must be positive")
    require(max_outer >= 1, "max_outer must be >= 1")
    sensors = observation.sensors
    n = sensors.n
    d = cfg.grid.dim
    if h_est is None:
        h_est = estimate_h2(observation, cfg.grid)
    lam = float(lambda0) if lambda0 is not None else default_lambda0(n, d)
    require(lam > 0.0, "initial lambda must be positive")

    op = cfg.operator
    grid = cfg.grid
    lambdas, f_norms, misfits, J_values, flags = [], [], [], [], []
    converged = False
    restarted = False
    result = None
    f_warm = None

    def solve_at(lam_val, warm):
        problem = TikhonovProblem(cfg, observation, lam_val)
        return minimize(problem, method=method, tol=tol, max_iter=max_iter, f0=warm)

    def record(lam_val, res, extra=()):
        f_int = grid.restrict(res.f.values)
        f_norm = float(np.sqrt(op.mass_dot(f_int, f_int)))
        row_flags = list(extra)
        if misfits and res.misfit > misfits[-1] * (1.0 + 1e-12):
            row_flags.append("misfit_increase")
        lambdas.append(lam_val)
        f_norms.append(f_norm)
        misfits.append(res.misfit)
        J_values.append(res.J)
        flags.append(";".join(row_flags))
        return f_norm

    while len(lambdas) < max_outer:
        result = solve_at(lam, f_warm)
        f_warm = result.f
        f_norm = record(lam, result)
        if f_norm == 0.0:
            if restarted:
                flags[-1] = ";".join(filter(None, [flags[-1], "degenerate_zero_field"]))
                break
            restarted = True
            flags[-1] = ";".join(filter(None, [flags[-1], "zero_field_restart"]))
            lam = default_lambda0(n, d)
            f_warm = None
            continue
        lam_new = lambda_step(result.misfit, f_norm, h_est, n, d)
        if lam_new < LAMBDA_FLOOR:
            lam_new = LAMBDA_FLOOR
            flags[-1] = ";".join(filter(None, [flags[-1], "lambda_floor"]))
        if abs(lam_new - lam) <= tol_lambda * max(lam_new, 1.0):
            converged = True
            lam = lam_new
            if len(lambdas) < max_outer:
                result = solve_at(lam, f_warm)
                record(lam, result, extra=("final",))
            break
        lam = lam_new

    trace = LambdaTrace(
        lambdas=np.asarray(lambdas),
        f_norms=np.asarray(f_norms),
        misfits=np.asarray(misfits),
        J_values=np.asarray(J_values),
        flags=tuple(flags),
        converged=converged,
        h_est=float(h_est),
    )
    return trace, result


def save_trace(trace, path):
    """CSV dump with header j,lambda,misfit,f_norm,J."""
    js = np.arange(len(trace))
    write_csv(
        path,
        "j,lambda,misfit,f_norm,J",
        [js, trace.lambdas, trace.misfits, trace.f_norms, trace.J_values],
    )
