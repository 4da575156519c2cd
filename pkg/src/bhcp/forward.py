"""Discrete heat semigroup via backward Euler, with its exact adjoint.

One step maps u to (M + dt*K)^-1 M u on the interior nodes. The step matrix
is constant, so it is factorized once (sparse LU) for moderate problem
sizes; a conjugate-gradient fallback covers larger ones. The adjoint solve
applies the transposed step sequence through a separately built transposed
factorization, so the bilinear adjoint identity is something the tests can
check rather than assume.
"""

import numpy as np
import scipy.sparse.linalg as spla

from ._validation import require
from .grid import Field

__all__ = ["ForwardConfig", "forward_solve", "adjoint_solve", "sensor_adjoint"]

_FACTORIZE_CAP = 100_000


class ForwardConfig:
    """Time-stepping setup for the solution map f -> u(., t), 0 <= t <= T.

    T/dt must be an integer (relative tolerance 1e-9); requests at times off
    the step grid are rejected rather than interpolated, which keeps the
    semigroup property exact.
    """

    def __init__(self, operator, T, dt, solver="auto", cg_tol=1e-10):
        require(T > 0, f"final time must be positive, got {T}")
        require(dt > 0, f"dt must be positive, got {dt}")
        steps = T / dt
        require(
            abs(steps - round(steps)) <= 1e-9 * max(1.0, steps),
            f"T/dt = {steps} is not an integer",
        )
        require(solver in ("auto", "factorize", "cg"), f"unknown solver {solver!r}")
        self.operator = operator
        self.T = float(T)
        self.dt = float(dt)
        self.steps = int(round(steps))
        self.cg_tol = float(cg_tol)
        if solver == "auto":
            solver = "factorize" if operator.n_interior <= _FACTORIZE_CAP else "cg"
        self.solver = solver
        self._lu = None
        self._lu_T = None
        self._step_matrix = None

    @property
    def grid(self):
        return self.operator.grid

    def step_matrix(self):
        if self._step_matrix is None:
            op = self.operator
            self._step_matrix = (op.mass + self.dt * op.stiffness).tocsc()
        return self._step_matrix

    # factorizations are caches, rebuilt after pickling (worker processes)
    def __getstate__(self):
        state = self.__dict__.copy()
        state["_lu"] = None
        state["_lu_T"] = None
        state["_step_matrix"] = None
        return state

    def _solve_step(self, rhs):
        A = self.step_matrix()
        if self.solver == "factorize":
            if self._lu is None:
                self._lu = spla.splu(A)
            return self._lu.solve(rhs)
        out, info = spla.cg(A, rhs, rtol=self.cg_tol, atol=0.0)
        require(info == 0, f"step CG failed to converge (info={info})", RuntimeError)
        return out

    def _solve_step_T(self, rhs):
        A = self.step_matrix()
        if self.solver == "factorize":
            if self._lu_T is None:
                self._lu_T = spla.splu(A.T.tocsc())
            return self._lu_T.solve(rhs)
        out, info = spla.cg(A.T.tocsc(), rhs, rtol=self.cg_tol, atol=0.0)
        require(info == 0, f"adjoint step CG failed (info={info})", RuntimeError)
        return out

    def steps_to(self, t):
        require(0.0 <= t <= self.T * (1 + 1e-12), f"t={t} outside [0, {self.T}]")
        k = t / self.dt
        require(
            abs(k - round(k)) <= 1e-9 * max(1.0, k),
            f"t={t} is not on the time step grid (dt={self.dt})",
        )
        return int(round(k))

    def propagate(self, u, n_steps):
        """Apply the one-step map n_steps times to interior values.

        Accepts a vector or a matrix of stacked columns (batched solves need
        the factorized path).
        """
        M = self.operator.mass
        for _ in range(n_steps):
            u = self._solve_step(M @ u)
        return u

    def propagate_adjoint(self, v, n_steps):
        """Transposed step sequence; adjoint w.r.t. the mass inner product.

        One adjoint step is A^-T M, the mass-weighted adjoint of A^-1 M.
        """
        M = self.operator.mass
        for _ in range(n_steps):
            v = self._solve_step_T(M @ v)
        return v


def forward_solve(cfg, f, t):
    """Solution map at time t applied to the initial field f.

    Linear in f; boundary values are clamped to zero.
    """
    k = cfg.steps_to(t)
    grid = cfg.grid
    u = cfg.propagate(grid.restrict(f.values), k)
    return Field(grid, grid.extend(u))


def adjoint_solve(cfg, g):
    """Adjoint of the full final-time map w.r.t. the discrete L2 inner product.

    Satisfies <F_T u, g>_M = <u, F_T* g>_M to round-off for all u; with a
    symmetric operator this coincides with forward_solve itself, but it is
    computed through the transposed steps so that identity stays a test.
    """
    grid = cfg.grid
    v = cfg.propagate_adjoint(grid.restrict(g.values), cfg.steps)
    return Field(grid, grid.extend(v))


def sensor_adjoint(cfg, sensors, r):
    """Adjoint of "solve to T, then sample at sensors" w.r.t. (.,.)_n.

    Scatters w_i^2 r_i onto the sensor nodes, divides by the mass weights,
    and runs the adjoint solve, so (r, F_T v)_n = (P_T* r, v) for all fields
    v. Sensor entries on boundary nodes contribute nothing, exactly like the
    forward samples there.
    """
    r = np.asarray(r, dtype=float)
    require(r.shape == (sensors.n,), f"expected {sensors.n} sensor values")
    grid = cfg.grid
    scattered = np.zeros(grid.n_interior)
    pos = sensors.interior_positions
    ok = pos >= 0
    np.add.at(scattered, pos[ok], sensors.w2[ok] * r[ok])
    v = cfg.propagate_adjoint(cfg.operator.mass_solve(scattered), cfg.steps)
    return Field(grid, grid.extend(v))
