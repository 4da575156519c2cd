"""Statistical and asymptotic verification harness.

Everything here is deterministic given (configuration, seed): replication r
of a run always draws from the stream keyed by (seed, r), so results do not
depend on execution order or worker count. Replicated inversions of one
problem family go through the diagonalized dense model when the grid is
small enough, and fall back to per-replication conjugate-gradient solves
otherwise; both routes produce the same minimizer to solver tolerance.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm as _normal

from ._validation import require
from .forward import forward_solve
from .grid import Field, l2_norm
from .observe import Observation, observe
from .tikhonov import DenseNormalModel, TikhonovProblem, minimize

__all__ = [
    "SlopeFit",
    "McSummary",
    "SweepResult",
    "DecayResult",
    "fit_slope",
    "qq_points",
    "qq_correlation",
    "mc_errors",
    "sweep_lambda",
    "interior_decay",
]

_DENSE_CAP = 4000


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    correlation: float
    n_points: int


@dataclass(frozen=True)
class McSummary:
    """Per-replication terminal errors ||F_T f_n - F_T f*||_n."""

    errors: np.ndarray = field(repr=False)
    mean: float = 0.0
    std: float = 0.0
    quantiles: np.ndarray = field(repr=False, default=None)
    replications: int = 0


@dataclass(frozen=True)
class SweepResult:
    lambdas: np.ndarray
    errors: np.ndarray  # replication-averaged relative L2 error of f_n vs f*
    lambda_star: float
    replications: int


@dataclass(frozen=True)
class DecayResult:
    times: np.ndarray
    errors_l2: np.ndarray
    errors_n: np.ndarray
    fit: SlopeFit
    predicted_slope: float


def fit_slope(xs, ys, loglog=True):
    """Least-squares line through (x, y) or (log10 x, log10 y)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    require(len(xs) == len(ys), "x and y lengths differ")
    require(len(xs) >= 3, "need at least 3 points for a slope fit")
    if loglog:
        require(np.all(xs > 0) and np.all(ys > 0), "log-log fit needs positive data")
        xs = np.log10(xs)
        ys = np.log10(ys)
    slope, intercept = np.polyfit(xs, ys, 1)
    corr = float(np.corrcoef(xs, ys)[0, 1])
    return SlopeFit(
        slope=float(slope),
        intercept=float(intercept),
        correlation=corr,
        n_points=len(xs),
    )


def qq_points(sample):
    """Standardized sample quantiles against standard normal quantiles.

    Plotting positions (i - 0.5) / N. Invariant under affine maps of the
    sample; degenerate (zero-variance) samples are rejected.
    """
    x = np.sort(np.asarray(sample, dtype=float))
    n = len(x)
    require(n >= 10, "need at least 10 samples for Q-Q points")
    std = x.std(ddof=1)
    require(std > 0.0, "degenerate sample: zero variance")
    z = (x - x.mean()) / std
    theo = _normal.ppf((np.arange(1, n + 1) - 0.5) / n)
    return theo, z


def qq_correlation(sample):
    theo, z = qq_points(sample)
    return float(np.corrcoef(theo, z)[0, 1])


def _use_dense(cfg, solver):
    if solver == "dense":
        return True
    if solver == "iterative":
        return False
    require(solver == "auto", f"unknown solver {solver!r}")
    return cfg.operator.n_interior <= _DENSE_CAP


def _mc_chunk(args):
    (cfg, f_star, sensors, noise, lam, reps, tol) = args
    clean = sensors.sample(forward_solve(cfg, f_star, cfg.T))
    out = []
    for rep in reps:
        values = clean + noise.draw(sensors.n, rep=rep)
        obs = Observation(sensors=sensors, values=values)
        res = minimize(TikhonovProblem(cfg, obs, lam), tol=tol)
        resid = sensors.sample(forward_solve(cfg, res.f, cfg.T)) - clean
        out.append(float(np.sqrt(np.sum(sensors.w2 * resid**2))))
    return out


def mc_errors(cfg, f_star, sensors, noise, lam, replications, solver="auto",
              jobs=1, tol=1e-8):
    """Monte Carlo terminal-error sample at a fixed regularization weight.

    Draws `replications` independent noise streams (keyed by the noise seed
    and the replication index), inverts each, and records the empirical-norm
    error of the recovered terminal state against the noiseless one.
    """
    require(replications >= 1, "need at least one replication")
    reps = np.arange(int(replications))
    if _use_dense(cfg, solver):
        model = DenseNormalModel(cfg, sensors)
        c_star = model.coords(cfg.grid.restrict(f_star.values))
        clean = model.terminal_values(c_star)
        draws = np.stack([noise.draw(sensors.n, rep=r) for r in reps], axis=1)
        d = model.B.T @ (sensors.w2[:, None] * (clean[:, None] + draws))
        y = d / (model.theta + lam)[:, None]
        resid = model.B @ y - clean[:, None]
        errors = np.sqrt(np.sum(sensors.w2[:, None] * resid**2, axis=0))
    elif jobs > 1:
        chunks = np.array_split(reps, jobs * 4)
        payloads = [
            (cfg, f_star, sensors, noise, lam, chunk, tol)
            for chunk in chunks
            if len(chunk)
        ]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_mc_chunk, payloads))
        errors = np.asarray([e for part in parts for e in part])
    else:
        errors = np.asarray(
            _mc_chunk((cfg, f_star, sensors, noise, lam, reps, tol))
        )
    return McSummary(
        errors=errors,
        mean=float(errors.mean()),
        std=float(errors.std(ddof=1)) if len(errors) > 1 else 0.0,
        quantiles=np.sort(errors),
        replications=int(replications),
    )


def sweep_lambda(cfg, f_star, sensors, noise, lambdas, replications=1,
                 solver="auto", jobs=1, tol=1e-8):
    """Relative reconstruction error over a lambda grid; lambda* = argmin.

    Errors are ||f_n - f*|| / ||f*|| in the discrete L2 norm, averaged over
    the noise replications. The grid is used as given (one point is legal);
    the curve is reported, U-shapedness is not asserted.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    require(len(lambdas) >= 1 and np.all(lambdas > 0), "lambda grid must be positive")
    reps = range(int(replications))
    f_star_int = cfg.grid.restrict(f_star.values)
    if _use_dense(cfg, solver):
        model = DenseNormalModel(cfg, sensors)
        c_star = model.coords(f_star_int)
        f_norm = np.sqrt(np.sum(c_star**2))
        clean = model.terminal_values(c_star)
        total = np.zeros(len(lambdas))
        for rep in reps:
            values = clean + noise.draw(sensors.n, rep=rep)
            d = model.data_coords(values)
            y = d[:, None] / (model.theta[:, None] + lambdas[None, :])
            total += np.sqrt(np.sum((y - c_star[:, None]) ** 2, axis=0)) / f_norm
    else:
        payloads = [
            (cfg, f_star, sensors, noise, (rep, lam), tol)
            for rep in reps
            for lam in lambdas
        ]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                vals = list(pool.map(_sweep_worker, payloads))
        else:
            vals = [_sweep_worker(p) for p in payloads]
        total = np.asarray(vals).reshape(int(replications), len(lambdas)).sum(axis=0)
    errors = total / max(int(replications), 1)
    return SweepResult(
        lambdas=lambdas,
        errors=errors,
        lambda_star=float(lambdas[int(np.argmin(errors))]),
        replications=int(replications),
    )


def _sweep_worker(args):
    cfg, f_star, sensors, noise, (rep, lam), tol = args
    obs = observe(cfg, f_star, sensors, noise, rep=rep)
    res = minimize(TikhonovProblem(cfg, obs, lam), tol=tol)
    op = cfg.operator
    f_star_int = cfg.grid.restrict(f_star.values)
    diff = cfg.grid.restrict(res.f.values) - f_star_int
    return float(
        np.sqrt(op.mass_dot(diff, diff)) / np.sqrt(op.mass_dot(f_star_int, f_star_int))
    )


def interior_decay(f_n, f_star, cfg, times, lam, sensors=None, fit_start_fraction=0.2):
    """Error of the propagated reconstruction against the propagated truth.

    Records ||F_t f_n - F_t f*|| per requested time (discrete L2, plus the
    empirical norm when sensors are given), fits log10(error) against t over
    t >= fit_start_fraction * T, and reports the companion predicted slope
    log10(lambda) / (2 T). Errors at round-off level are rejected as
    degenerate rather than fitted.
    """
    times = np.sort(np.asarray(times, dtype=float))
    steps = [cfg.steps_to(t) for t in times]
    diff = f_n - f_star
    scale = l2_norm(f_star)
    require(
        l2_norm(diff) > 1e-10 * max(scale, 1.0),
        "degenerate decay fit: reconstruction equals the truth to round-off",
    )
    errors_l2 = np.empty(len(times))
    errors_n = np.full(len(times), np.nan)
    u = cfg.grid.restrict(diff.values)
    done = 0
    for i, k in enumerate(steps):
        u = cfg.propagate(u, k - done)
        done = k
        f_t = Field(cfg.grid, cfg.grid.extend(u))
        errors_l2[i] = l2_norm(f_t)
        if sensors is not None:
            vals = sensors.sample(f_t)
            errors_n[i] = np.sqrt(np.sum(sensors.w2 * vals**2))
    t0 = fit_start_fraction * cfg.T
    mask = times >= t0 - 1e-12
    require(int(mask.sum()) >= 3, "need at least 3 fit points past the start fraction")
    fit = fit_slope(times[mask], np.log10(errors_l2[mask]), loglog=False)
    predicted = float(np.log10(lam) / (2.0 * cfg.T))
    return DecayResult(
        times=times,
        errors_l2=errors_l2,
        errors_n=errors_n,
        fit=fit,
        predicted_slope=predicted,
    )
