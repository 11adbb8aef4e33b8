"""Sparse assembly of the discrete differential operators.

Two boundary conventions are used:

* ``dirichlet-ghost-zero`` for operators acting on the dual variable
  ``p`` (which lives in H_0^2): every stencil entry that falls outside the
  grid reads a ghost value of zero.
* ``neumann-nearest`` for operators acting on the primal variables
  ``u`` and ``w``: forward differences with the ghost value copied from the
  nearest grid point, so the last difference in each direction vanishes.

All operators act on C-ordered flat vectors, components stacked in blocks.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .fields import GridSpec

DIRICHLET = "dirichlet-ghost-zero"
NEUMANN = "neumann-nearest"

# Stencils as {(di, dj): coefficient}; di runs along rows (x), dj along columns (y).
D_XX = {(-1, 0): 1.0, (0, 0): -2.0, (1, 0): 1.0}
D_YY = {(0, -1): 1.0, (0, 0): -2.0, (0, 1): 1.0}
D_XY = {
    (0, 0): 1.0,
    (0, -1): -0.5, (0, 1): -0.5,
    (-1, 0): -0.5, (1, 0): -0.5,
    (-1, -1): 0.5, (1, 1): 0.5,
}
D_XXXX = {(-2, 0): 1.0, (-1, 0): -4.0, (0, 0): 6.0, (1, 0): -4.0, (2, 0): 1.0}
D_YYYY = {(0, -2): 1.0, (0, -1): -4.0, (0, 0): 6.0, (0, 1): -4.0, (0, 2): 1.0}


def convolve_stencils(a: dict, b: dict) -> dict:
    out: dict = {}
    for (ai, aj), av in a.items():
        for (bi, bj), bv in b.items():
            key = (ai + bi, aj + bj)
            out[key] = out.get(key, 0.0) + av * bv
    return {k: v for k, v in out.items() if v != 0.0}


D_YYXX = convolve_stencils(D_XX, D_YY)
D_XXXY = convolve_stencils(D_XX, D_XY)
D_XYYY = convolve_stencils(D_YY, D_XY)
BILAPLACIAN = {
    k: D_XXXX.get(k, 0.0) + D_YYYY.get(k, 0.0) + 2.0 * D_YYXX.get(k, 0.0)
    for k in set(D_XXXX) | set(D_YYYY) | set(D_YYXX)
}


@dataclass(frozen=True)
class SparseOperator:
    matrix: sp.csr_matrix
    bc_tag: str
    name: str = ""

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x

    @property
    def T(self):
        return self.matrix.T

    def dump(self, path) -> None:
        """Write the operator as ``row col value`` lines."""
        coo = self.matrix.tocoo()
        with open(path, "w") as fh:
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {v!r}\n")


def stencil_matrix(n: int, m: int, stencil: dict, scale: float = 1.0) -> sp.csr_matrix:
    """Apply ``stencil`` at every pixel, reading zero at ghost points."""
    ii, jj = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    rows, cols, vals = [], [], []
    for (di, dj), c in stencil.items():
        ti, tj = ii + di, jj + dj
        ok = (ti >= 0) & (ti < n) & (tj >= 0) & (tj < m)
        rows.append((ii * m + jj)[ok])
        cols.append((ti * m + tj)[ok])
        vals.append(np.full(ok.sum(), c * scale))
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * m, n * m),
    )
    return A.tocsr()


def _forward_diff_1d(k: int) -> sp.csr_matrix:
    # Replicate boundary: the last forward difference is zero.
    D = sp.diags([-np.ones(k), np.ones(k - 1)], [0, 1], shape=(k, k)).tolil()
    D[k - 1, k - 1] = 0.0
    return D.tocsr()


# ---------------------------------------------------------------------------
# Dual side (ghost-zero)


@lru_cache(maxsize=32)
def _dual_parts(grid: GridSpec) -> dict:
    n, m, h = grid.n, grid.m, grid.h
    bx = stencil_matrix(n, m, {(0, 0): 1.0, (-1, 0): -1.0}, 1.0 / h)
    by = stencil_matrix(n, m, {(0, 0): 1.0, (0, -1): -1.0}, 1.0 / h)
    h2, h4 = h * h, h ** 4
    return {
        "bx": bx,
        "by": by,
        "dxx": stencil_matrix(n, m, D_XX, 1.0 / h2),
        "dyy": stencil_matrix(n, m, D_YY, 1.0 / h2),
        "dxy": stencil_matrix(n, m, D_XY, 1.0 / h2),
        "dxxxx": stencil_matrix(n, m, D_XXXX, 1.0 / h4),
        "dyyyy": stencil_matrix(n, m, D_YYYY, 1.0 / h4),
        "dyyxx": stencil_matrix(n, m, D_YYXX, 1.0 / h4),
        "dxxxy": stencil_matrix(n, m, D_XXXY, 1.0 / h4),
        "dxyyy": stencil_matrix(n, m, D_XYYY, 1.0 / h4),
        "bilap": stencil_matrix(n, m, BILAPLACIAN, 1.0 / h4),
    }


def stencil_operator(grid: GridSpec, name: str) -> sp.csr_matrix:
    """One of the named scalar ghost-zero operators, e.g. ``"dxy"``."""
    return _dual_parts(grid)[name]


@lru_cache(maxsize=32)
def divergence(grid: GridSpec) -> SparseOperator:
    """``div : V_h -> W_h`` with backward differences and zero ghosts."""
    P = _dual_parts(grid)
    Z = sp.csr_matrix(P["bx"].shape)
    M = sp.bmat([[P["bx"], P["by"], Z], [Z, P["bx"], P["by"]]], format="csr")
    return SparseOperator(M, DIRICHLET, "div")


@lru_cache(maxsize=32)
def gradient(grid: GridSpec) -> SparseOperator:
    """``grad : W_h -> V_h``, exactly ``-div^T``."""
    return SparseOperator((-divergence(grid).matrix.T).tocsr(), DIRICHLET, "grad")


@lru_cache(maxsize=32)
def second_gradient(grid: GridSpec) -> SparseOperator:
    P = _dual_parts(grid)
    M = sp.vstack([P["dxx"], P["dxy"], P["dyy"]], format="csr")
    return SparseOperator(M, DIRICHLET, "grad2")


@lru_cache(maxsize=32)
def second_divergence(grid: GridSpec, scaled: bool = False) -> SparseOperator:
    """``div^2 p = D_xx p11 + 2 D_xy p12 + D_yy p22``.

    With ``scaled=True`` the operator acts on ``(p11, 2 p12, p22)``.
    """
    P = _dual_parts(grid)
    w = 1.0 if scaled else 2.0
    M = sp.hstack([P["dxx"], w * P["dxy"], P["dyy"]], format="csr")
    return SparseOperator(M, DIRICHLET, "div2")


@lru_cache(maxsize=32)
def bilaplacian(grid: GridSpec, scaled: bool = False) -> SparseOperator:
    """Componentwise 13-point bi-Laplacian; ``(D, D/2, D)`` when scaled."""
    D = _dual_parts(grid)["bilap"]
    mid = 0.5 if scaled else 1.0
    return SparseOperator(sp.block_diag([D, mid * D, D], format="csr"), DIRICHLET, "bilap")


@lru_cache(maxsize=32)
def grad2_div2(grid: GridSpec, scaled: bool = True) -> SparseOperator:
    """``grad^2 div^2`` assembled from the fourth-order stencils.

    The mixed block uses ``D_xyxy = D_xxyy = D_yyxx``.  In the scaled
    representation the matrix is symmetric.
    """
    P = _dual_parts(grid)
    w = 1.0 if scaled else 2.0
    xxxx, yyyy, xxyy = P["dxxxx"], P["dyyyy"], P["dyyxx"]
    xxxy, xyyy = P["dxxxy"], P["dxyyy"]
    M = sp.bmat(
        [
            [xxxx, w * xxxy, xxyy],
            [xxxy, w * xxyy, xyyy],
            [xxyy, w * xyyy, yyyy],
        ],
        format="csr",
    )
    return SparseOperator(M, DIRICHLET, "grad2div2")


@lru_cache(maxsize=32)
def grad2_div2_composed(grid: GridSpec, scaled: bool = True) -> SparseOperator:
    """Exact product ``grad^2 @ div^2`` of the assembled matrices.

    This is the Hessian of ``1/2 |div^2 p|^2`` in scaled coordinates and is
    what the dual Newton solver uses.
    """
    G = second_gradient(grid).matrix
    D = second_divergence(grid, scaled=scaled).matrix
    M = (G @ D).tocsr()
    M.sum_duplicates()
    return SparseOperator(M, DIRICHLET, "grad2div2-composed")


# ---------------------------------------------------------------------------
# Primal side (nearest-point Neumann)


@lru_cache(maxsize=32)
def _primal_parts(grid: GridSpec):
    n, m, h = grid.n, grid.m, grid.h
    fx = sp.kron(_forward_diff_1d(n), sp.identity(m), format="csr") / h
    fy = sp.kron(sp.identity(n), _forward_diff_1d(m), format="csr") / h
    return fx, fy


@lru_cache(maxsize=32)
def neumann_gradient(grid: GridSpec) -> SparseOperator:
    """Forward-difference gradient ``U_h -> W_h`` with replicate boundary."""
    fx, fy = _primal_parts(grid)
    return SparseOperator(sp.vstack([fx, fy], format="csr"), NEUMANN, "grad-N")


@lru_cache(maxsize=32)
def neumann_laplacian(grid: GridSpec) -> SparseOperator:
    """Five-point Laplacian with ghost values copied from the nearest point."""
    G = neumann_gradient(grid).matrix
    L = (-(G.T @ G)).tocsr()
    L.sum_duplicates()
    L.eliminate_zeros()
    return SparseOperator(L, NEUMANN, "lap-N")


@lru_cache(maxsize=32)
def sym_gradient(grid: GridSpec) -> SparseOperator:
    """``E w = (dx w1, (dy w1 + dx w2)/2, dy w2)``, unscaled tensor output."""
    fx, fy = _primal_parts(grid)
    Z = sp.csr_matrix(fx.shape)
    M = sp.bmat([[fx, Z], [0.5 * fy, 0.5 * fx], [Z, fy]], format="csr")
    return SparseOperator(M, NEUMANN, "E")


@lru_cache(maxsize=32)
def sym_gradient_adjoint(grid: GridSpec) -> SparseOperator:
    """Plain matrix transpose of :func:`sym_gradient`."""
    return SparseOperator(sym_gradient(grid).matrix.T.tocsr(), NEUMANN, "E^T")


def apply(op: SparseOperator, x: np.ndarray, out_shape) -> np.ndarray:
    """Apply ``op`` to a field array and reshape the result."""
    return np.asarray(op.matrix @ np.asarray(x, dtype=float).ravel()).reshape(out_shape)
