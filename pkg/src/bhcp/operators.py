"""Discrete elliptic operator L = -div(a grad u) + c u with zero Dirichlet data.

Assembly uses piecewise-linear finite elements: plain linear elements in 1D,
and in 2D a structured triangulation where every grid cell is split into two
triangles along the (i,j)-(i+1,j+1) diagonal. Coefficients are sampled at the
nodes and averaged per element. The mass matrix is lumped (diagonal) by
default, which makes its inverse trivial; a consistent mass matrix is
available as an option.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._io import write_csv
from ._validation import require
from .grid import Field, Grid

__all__ = [
    "Coefficients",
    "EllipticOperator",
    "Spectrum",
    "assemble",
    "partial_spectrum",
    "analytic_spectrum",
    "save_spectrum",
]

# dense generalized eigensolves are cheap up to this many interior nodes
_DENSE_EIG_CAP = 2000


@dataclass(frozen=True)
class Coefficients:
    """Nodal samples of the diffusivity a > 0 and reaction c >= 0."""

    a: Field
    c: Field

    def __post_init__(self):
        require(self.a.grid == self.c.grid, "a and c must share a grid")
        require(float(self.a.values.min()) > 0.0, "diffusivity a must be positive everywhere")
        require(float(self.c.values.min()) >= 0.0, "reaction c must be nonnegative")

    @classmethod
    def constant(cls, grid, a=1.0, c=0.0):
        n = grid.n_nodes
        return cls(Field(grid, np.full(n, float(a))), Field(grid, np.full(n, float(c))))

    @property
    def a_bounds(self):
        return float(self.a.values.min()), float(self.a.values.max())

    def is_constant(self, tol=1e-12):
        return (
            np.ptp(self.a.values) <= tol * max(1.0, abs(self.a.values[0]))
            and np.ptp(self.c.values) <= tol * max(1.0, abs(self.c.values[0]))
        )


@dataclass(frozen=True)
class EllipticOperator:
    """Sparse symmetric stiffness-plus-reaction matrix over interior nodes.

    stiffness includes the reaction term; mass is the (lumped or consistent)
    mass matrix on the same interior index set. Positive definite for a > 0,
    c >= 0 with the Dirichlet rows eliminated.
    """

    grid: Grid
    coeff: Coefficients
    stiffness: sp.csr_matrix = field(repr=False)
    mass: sp.csr_matrix = field(repr=False)
    lumped: bool = True

    @property
    def n_interior(self):
        return self.grid.n_interior

    @property
    def mass_diagonal(self):
        require(self.lumped, "mass_diagonal is only defined for lumped mass")
        return self.mass.diagonal()

    def mass_dot(self, u, v):
        """Discrete L2 inner product of interior vectors."""
        return float(np.dot(u, self.mass @ v))

    def mass_solve(self, rhs):
        if self.lumped:
            return rhs / self.mass.diagonal()
        return spla.spsolve(self.mass.tocsc(), rhs)

    def apply(self, f):
        """Generalized operator action M^-1 K on a field (zero boundary)."""
        u = self.grid.restrict(f.values)
        return Field(self.grid, self.grid.extend(self.mass_solve(self.stiffness @ u)))


@dataclass(frozen=True)
class Spectrum:
    """Smallest generalized eigenpairs, ascending, discrete-L2 orthonormal."""

    eigenvalues: np.ndarray
    eigenfields: tuple  # of Field

    def __len__(self):
        return len(self.eigenvalues)


def _assemble_1d(grid, coeff, mass_kind):
    (n,) = grid.shape
    (h,) = grid.h
    a = coeff.a.values
    c = coeff.c.values
    nel = n - 1
    a_e = 0.5 * (a[:-1] + a[1:])
    c_e = 0.5 * (c[:-1] + c[1:])

    rows, cols, vals = [], [], []
    mrows, mcols, mvals = [], [], []
    left = np.arange(nel)
    right = left + 1
    k_e = a_e / h
    # stiffness: a_e/h * [[1,-1],[-1,1]]
    for (i, j, v) in (
        (left, left, k_e),
        (right, right, k_e),
        (left, right, -k_e),
        (right, left, -k_e),
    ):
        rows.append(i)
        cols.append(j)
        vals.append(v)
    if mass_kind == "lumped":
        mdiag = np.zeros(n)
        np.add.at(mdiag, left, h / 2)
        np.add.at(mdiag, right, h / 2)
        # reaction with lumped mass: diagonal c_i * m_i
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append(c * mdiag)
        mrows.append(np.arange(n))
        mcols.append(np.arange(n))
        mvals.append(mdiag)
    else:
        # consistent element mass h/6 * [[2,1],[1,2]]
        for (i, j, w) in (
            (left, left, 2.0),
            (right, right, 2.0),
            (left, right, 1.0),
            (right, left, 1.0),
        ):
            mrows.append(i)
            mcols.append(j)
            mvals.append(np.full(nel, w * h / 6))
            rows.append(i)
            cols.append(j)
            vals.append(c_e * w * h / 6)
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    M = sp.coo_matrix(
        (np.concatenate(mvals), (np.concatenate(mrows), np.concatenate(mcols))),
        shape=(n, n),
    ).tocsr()
    return K, M


def _triangle_stiffness(x, y, a_e):
    """3x3 element stiffness for a P1 triangle with constant diffusivity."""
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]])
    cc = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]])
    area = 0.5 * abs(b[0] * cc[1] - b[1] * cc[0])
    return a_e * (np.outer(b, b) + np.outer(cc, cc)) / (4 * area), area


def _assemble_2d(grid, coeff, mass_kind):
    nx, ny = grid.shape
    hx, hy = grid.h
    n = grid.n_nodes
    a = coeff.a.values
    c = coeff.c.values

    def nid(ix, iy):
        return ix * ny + iy

    ix, iy = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    ix = ix.ravel()
    iy = iy.ravel()
    n00 = nid(ix, iy)
    n10 = nid(ix + 1, iy)
    n01 = nid(ix, iy + 1)
    n11 = nid(ix + 1, iy + 1)
    # the two triangles share the diagonal n00-n11
    tris = np.concatenate(
        [np.stack([n00, n10, n11], axis=1), np.stack([n00, n11, n01], axis=1)]
    )

    # local geometry is the same for every triangle of each orientation
    k_lower, area = _triangle_stiffness(
        np.array([0.0, hx, hx]), np.array([0.0, 0.0, hy]), 1.0
    )
    k_upper, _ = _triangle_stiffness(
        np.array([0.0, hx, 0.0]), np.array([0.0, hy, hy]), 1.0
    )
    ntri = tris.shape[0]
    half = ntri // 2
    k_loc = np.empty((ntri, 3, 3))
    k_loc[:half] = k_lower
    k_loc[half:] = k_upper
    a_e = a[tris].mean(axis=1)
    k_loc *= a_e[:, None, None]

    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    K = sp.coo_matrix((k_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    if mass_kind == "lumped":
        mdiag = np.zeros(n)
        np.add.at(mdiag, tris.ravel(), area / 3)
        M = sp.diags(mdiag).tocsr()
        K = K + sp.diags(c * mdiag).tocsr()
    else:
        m_loc = (area / 12.0) * (np.ones((3, 3)) + np.eye(3))
        c_e = c[tris].mean(axis=1)
        mvals = np.broadcast_to(m_loc, (ntri, 3, 3)).ravel()
        M = sp.coo_matrix((mvals, (rows, cols)), shape=(n, n)).tocsr()
        K = K + sp.coo_matrix(
            ((c_e[:, None, None] * m_loc).ravel(), (rows, cols)), shape=(n, n)
        ).tocsr()
    return K, M


def assemble(grid, coeff, mass="lumped"):
    """Assemble the interior stiffness and mass matrices.

    Dirichlet rows/columns are eliminated, so both matrices act on interior
    vectors in node enumeration order.
    """
    require(coeff.a.grid == grid, "coefficients sampled on a different grid")
    require(mass in ("lumped", "consistent"), f"unknown mass kind {mass!r}")
    if grid.dim == 1:
        K, M = _assemble_1d(grid, coeff, mass)
    else:
        K, M = _assemble_2d(grid, coeff, mass)
    idx = grid.interior_index
    K = K[idx][:, idx].tocsr()
    M = M[idx][:, idx].tocsr()
    K.sum_duplicates()
    M.sum_duplicates()
    return EllipticOperator(
        grid=grid, coeff=coeff, stiffness=K, mass=M, lumped=(mass == "lumped")
    )


def _canonical_sign(vec):
    i = int(np.argmax(np.abs(vec)))
    return vec if vec[i] >= 0 else -vec


def partial_spectrum(op, K):
    """K smallest generalized eigenpairs of (stiffness, mass).

    Eigenvectors come back as fields (zero boundary), orthonormal in the
    discrete L2 inner product, with a deterministic sign convention.
    """
    n = op.n_interior
    require(1 <= K <= n, f"K must be in [1, {n}], got {K}")
    if n <= _DENSE_EIG_CAP:
        Kd = op.stiffness.toarray()
        Md = op.mass.toarray()
        vals, vecs = scipy.linalg.eigh(Kd, Md, subset_by_index=[0, K - 1])
    else:
        try:
            vals, vecs = spla.eigsh(op.stiffness, k=K, M=op.mass, sigma=0, which="LM")
        except spla.ArpackNoConvergence as err:
            raise RuntimeError(
                f"eigensolver did not converge for K={K}: {err}"
            ) from err
        order = np.argsort(vals)
        vals = vals[order]
        vecs = vecs[:, order]
    fields = []
    for k in range(K):
        v = vecs[:, k]
        v = v / np.sqrt(op.mass_dot(v, v))
        v = _canonical_sign(v)
        fields.append(Field(op.grid, op.grid.extend(v)))
    return Spectrum(eigenvalues=np.asarray(vals, dtype=float), eigenfields=tuple(fields))


def analytic_spectrum(grid, coeff, T, K):
    """Exact eigenvalues on a rectangle with constant coefficients.

    Returns the K smallest (mu_k, exp(-mu_k * T)) pairs from separation of
    variables; the decay factors are the spectrum of the solution map at
    time T. Used as an oracle for the assembled operator and the stepper.
    """
    require(coeff.is_constant(), "analytic spectrum requires constant coefficients")
    require(T >= 0.0, "T must be nonnegative")
    a0 = float(coeff.a.values[0])
    c0 = float(coeff.c.values[0])
    L = grid.lengths
    # j up to K covers the K smallest modes on any aspect ratio
    jmax = K + 1
    if grid.dim == 1:
        mus = [a0 * (j * np.pi / L[0]) ** 2 + c0 for j in range(1, jmax + 1)]
    else:
        mus = [
            a0 * ((j * np.pi / L[0]) ** 2 + (k * np.pi / L[1]) ** 2) + c0
            for j in range(1, jmax + 1)
            for k in range(1, jmax + 1)
        ]
    mus = np.sort(np.asarray(mus))[:K]
    return [(float(mu), float(np.exp(-mu * T))) for mu in mus]


def save_spectrum(spectrum, T, path):
    """CSV dump with header k,mu_k,exp(-mu_k*T)."""
    ks = np.arange(1, len(spectrum) + 1)
    mus = spectrum.eigenvalues
    write_csv(path, "k,mu_k,exp(-mu_k*T)", [ks, mus, np.exp(-mus * T)])
