"""Huber-regularized primal TGV denoising: KKT system and semismooth Newton.

Unknowns ``x = (u, w, q, p)`` with ``u`` scalar, ``w`` and ``q`` vector and
``p`` a symmetric tensor stored unscaled.  Primal variables use Neumann
differences; ``div`` is ``-G^T`` and the tensor divergence is ``-E^T M``
with ``M = diag(1, 2, 1)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import operators as ops
from . import smoothing as sm
from .exceptions import ConvergenceError, SolverError
from .fields import TENSOR_WEIGHTS, GridSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PDSolverConfig:
    mu: float = 0.1
    alpha_reg: float = 1.0
    gamma0: float = 1e-3
    gamma1: float = 1e-3
    delta: float = 1e-5
    kkt_tol: float = 1e-4
    max_newton: int = 50
    projection: str = "pixel"

    def __post_init__(self):
        if not self.mu > 0 or not self.alpha_reg > 0:
            raise ValueError("mu and alpha_reg must be positive")
        if not (self.gamma0 > self.delta / 2 and self.gamma1 > self.delta / 2):
            raise ValueError("Huber radii must exceed delta/2")
        if self.projection not in ("pixel", "component"):
            raise ValueError(f"unknown projection mode {self.projection!r}")


@dataclass
class KKTState:
    u: np.ndarray
    w: np.ndarray
    q: np.ndarray
    p: np.ndarray
    feasible: bool = False

    @classmethod
    def initial(cls, f) -> "KKTState":
        f = np.asarray(f, dtype=float)
        n, m = f.shape
        return cls(f.copy(), np.zeros((2, n, m)), np.zeros((2, n, m)), np.zeros((3, n, m)), True)

    def copy(self) -> "KKTState":
        return KKTState(self.u.copy(), self.w.copy(), self.q.copy(), self.p.copy(), self.feasible)

    def check_feasible(self, alpha0, alpha1, tol: float = 1e-12) -> bool:
        okq = np.all(sm.pixel_magnitude(self.q) <= np.asarray(alpha1) * (1 + tol))
        okp = np.all(sm.pixel_magnitude(self.p, tensor=True) <= np.asarray(alpha0) * (1 + tol))
        return bool(okq and okp)


@dataclass
class PDResult:
    state: KKTState
    converged: bool
    iterations: int
    history: list[tuple[float, float, float, float]] = field(default_factory=list)

    @property
    def u(self) -> np.ndarray:
        return self.state.u


class _PDOps:
    def __init__(self, grid: GridSpec):
        N = grid.size
        self.N = N
        self.G = ops.neumann_gradient(grid).matrix
        self.GT = self.G.T.tocsr()
        self.L = ops.neumann_laplacian(grid).matrix
        self.E = ops.sym_gradient(grid).matrix
        self.Mw = np.repeat(TENSOR_WEIGHTS, N)
        self.EtM = (self.E.T @ sp.diags(self.Mw)).tocsr()
        I = sp.identity(N, format="csr")
        self.L2 = sp.block_diag([self.L, self.L], format="csr")
        self.I2 = sp.identity(2 * N, format="csr")
        self.I3 = sp.identity(3 * N, format="csr")
        self.I = I


_OPS_CACHE: dict = {}


def _pd_ops(grid: GridSpec) -> _PDOps:
    if grid not in _OPS_CACHE:
        _OPS_CACHE[grid] = _PDOps(grid)
    return _OPS_CACHE[grid]


def _grid_for(f, grid):
    return GridSpec.primal_dual(*np.shape(f)) if grid is None else grid


def _weights(alpha, grid, k):
    return np.broadcast_to(np.asarray(alpha, dtype=float), grid.shape).ravel()[None, :].repeat(k, 0)


def _pieces(x: KKTState, O: _PDOps, cfg: PDSolverConfig):
    N = O.N
    u = x.u.ravel()
    w = x.w.reshape(2, N)
    z = (O.G @ u).reshape(2, N) - w
    e = (O.E @ w.ravel()).reshape(3, N)
    nz = sm.pixel_magnitude(z)
    ne = sm.pixel_magnitude(e, tensor=True)
    return u, w, z, e, nz, ne


def kkt_residual(x: KKTState, f, alpha0, alpha1, cfg: PDSolverConfig, grid: GridSpec = None):
    """The four optimality residuals and their Euclidean norms."""
    grid = _grid_for(f, grid)
    O = _pd_ops(grid)
    N = O.N
    u, w, z, e, nz, ne = _pieces(x, O, cfg)
    q = x.q.reshape(2, N)
    p = x.p.reshape(3, N)
    a1 = np.broadcast_to(np.asarray(alpha1, dtype=float), grid.shape).ravel()
    a0 = np.broadcast_to(np.asarray(alpha0, dtype=float), grid.shape).ravel()
    r1 = u - cfg.mu * (O.L @ u) + O.GT @ q.ravel() - np.asarray(f, dtype=float).ravel()
    r2 = cfg.alpha_reg * (w.ravel() - O.L2 @ w.ravel()) - q.ravel() + O.EtM @ p.ravel()
    r3 = sm.smooth_max(nz, cfg.gamma1, cfg.delta) * q - a1 * z
    r4 = sm.smooth_max(ne, cfg.gamma0, cfg.delta) * p - a0 * e
    n, m = grid.shape
    res = (r1.reshape(n, m), r2.reshape(2, n, m), r3.reshape(2, n, m), r4.reshape(3, n, m))
    norms = tuple(float(np.linalg.norm(r)) for r in res)
    return res, norms


def _outer_blocks(vals, dirs, chi):
    """Sparse block matrix with entries ``chi * vals[a] * dirs[b]`` per pixel."""
    k, l = len(vals), len(dirs)
    return sp.bmat([[sp.diags(chi * vals[a] * dirs[b]) for b in range(l)] for a in range(k)], format="csr")


def assemble_kkt_blocks(x: KKTState, f, alpha0, alpha1, cfg: PDSolverConfig, grid: GridSpec = None):
    """Newton blocks at ``x``: ``A, B, C, D`` and right-hand sides ``b1, b2``.

    The linear system ``[A B; C D] x_new = [b1; b2]`` is the Newton step
    written for the new iterate, with ``x1 = (u, w)`` and ``x2 = (q, p)``.
    """
    grid = _grid_for(f, grid)
    O = _pd_ops(grid)
    N = O.N
    u, w, z, e, nz, ne = _pieces(x, O, cfg)
    q = x.q.reshape(2, N)
    p = x.p.reshape(3, N)
    a1 = np.broadcast_to(np.asarray(alpha1, dtype=float), grid.shape).ravel()
    a0 = np.broadcast_to(np.asarray(alpha0, dtype=float), grid.shape).ravel()

    A = sp.block_diag([O.I - cfg.mu * O.L, cfg.alpha_reg * (O.I2 - O.L2)], format="csr")
    Z32 = sp.csr_matrix((N, 3 * N))
    B = sp.bmat([[O.GT, Z32], [-O.I2, O.EtM]], format="csr")

    chi1 = sm.smooth_max_deriv(nz, cfg.gamma1, cfg.delta)
    chi0 = sm.smooth_max_deriv(ne, cfg.gamma0, cfg.delta)
    # chi vanishes at small magnitudes, so the clamp only avoids 0/0.
    tiny = np.finfo(float).tiny
    dz = z / np.maximum(nz, tiny)
    de = e * TENSOR_WEIGHTS[:, None] / np.maximum(ne, tiny)
    Q1 = _outer_blocks(q, dz, chi1) - sp.diags(np.tile(a1, 2))
    P0 = _outer_blocks(p, de, chi0) - sp.diags(np.tile(a0, 3))
    Cq = sp.hstack([Q1 @ O.G, -Q1], format="csr")
    Cp = sp.hstack([sp.csr_matrix((3 * N, N)), P0 @ O.E], format="csr")
    C = sp.vstack([Cq, Cp], format="csr")
    m1 = sm.smooth_max(nz, cfg.gamma1, cfg.delta)
    m0 = sm.smooth_max(ne, cfg.gamma0, cfg.delta)
    D = np.concatenate([np.tile(m1, 2), np.tile(m0, 3)])

    b1 = np.concatenate([np.asarray(f, dtype=float).ravel(), np.zeros(2 * N)])
    # Jacobian times x minus the nonlinear residual.
    b2 = np.concatenate([(chi1 * nz * q).ravel(), (chi0 * ne * p).ravel()])
    return A, B, C, sp.diags(D), b1, b2


def _solve_schur(A, B, C, Dd, b1, b2):
    Dinv = 1.0 / Dd
    S = (A - B @ sp.diags(Dinv) @ C).tocsc()
    x1 = spla.spsolve(S, b1 - B @ (Dinv * b2))
    if not np.all(np.isfinite(x1)):
        raise SolverError("Schur complement solve failed")
    x2 = Dinv * (b2 - C @ x1)
    return x1, x2


def pd_newton_step(x: KKTState, f, alpha0, alpha1, cfg: PDSolverConfig, grid: GridSpec = None,
                   project: bool = True) -> KKTState:
    grid = _grid_for(f, grid)
    N = grid.size
    n, m = grid.shape
    A, B, C, D, b1, b2 = assemble_kkt_blocks(x, f, alpha0, alpha1, cfg, grid)
    x1, x2 = _solve_schur(A, B, C, D.diagonal(), b1, b2)
    u = x1[:N].reshape(n, m)
    w = x1[N:].reshape(2, n, m)
    q = x2[:2 * N].reshape(2, n, m)
    p = x2[2 * N:].reshape(3, n, m)
    if project:
        q, p = sm.project_feasible(q, p, alpha1, alpha0, mode=cfg.projection)
    return KKTState(u, w, q, p, feasible=project)


def pd_newton_solve(f, alpha0, alpha1, cfg: PDSolverConfig, x_init: KKTState | None = None,
                    grid: GridSpec = None, raise_on_failure: bool = True) -> PDResult:
    """Semismooth Newton with Schur complement and feasibility projection.

    Stops once every residual has Euclidean norm at most ``kkt_tol``.
    """
    grid = _grid_for(f, grid)
    f = np.asarray(f, dtype=float)
    if x_init is None:
        x = KKTState.initial(f)
    else:
        x = x_init.copy()
        x.q, x.p = sm.project_feasible(x.q, x.p, alpha1, alpha0, mode=cfg.projection)
        x.feasible = True
    history = []
    _, norms = kkt_residual(x, f, alpha0, alpha1, cfg, grid)
    history.append(norms)
    it = 0
    while max(norms) > cfg.kkt_tol:
        if it >= cfg.max_newton:
            msg = f"primal-dual Newton did not converge in {cfg.max_newton} iterations"
            if raise_on_failure:
                raise ConvergenceError(msg, history)
            log.warning(msg)
            return PDResult(x, False, it, history)
        x = pd_newton_step(x, f, alpha0, alpha1, cfg, grid)
        _, norms = kkt_residual(x, f, alpha0, alpha1, cfg, grid)
        history.append(norms)
        it += 1
    return PDResult(x, True, it, history)


def primal_energy(u, w, f, alpha0, alpha1, cfg: PDSolverConfig, grid: GridSpec = None) -> float:
    """Doubly regularized primal energy with Huber terms."""
    grid = _grid_for(f, grid)
    O = _pd_ops(grid)
    N = O.N
    u = np.asarray(u, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    d = u - np.asarray(f, dtype=float).ravel()
    gu = O.G @ u
    z = (gu - w).reshape(2, N)
    e = (O.E @ w).reshape(3, N)
    a1 = np.broadcast_to(np.asarray(alpha1, dtype=float), grid.shape).ravel()
    a0 = np.broadcast_to(np.asarray(alpha0, dtype=float), grid.shape).ravel()
    val = 0.5 * d @ d + 0.5 * cfg.mu * gu @ gu
    val += 0.5 * cfg.alpha_reg * (w @ w - w @ (O.L2 @ w))
    val += float(np.sum(a1 * sm.huber(z, cfg.gamma1)))
    val += float(np.sum(a0 * sm.huber(e, cfg.gamma0, tensor=True)))
    return grid.h ** 2 * float(val)


def primal_energy_gradient(u, w, f, alpha0, alpha1, cfg: PDSolverConfig, grid: GridSpec = None):
    """Euclidean gradient of :func:`primal_energy` with respect to ``(u, w)``."""
    grid = _grid_for(f, grid)
    O = _pd_ops(grid)
    N = O.N
    u = np.asarray(u, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    z = (O.G @ u - w).reshape(2, N)
    e = (O.E @ w).reshape(3, N)
    a1 = np.broadcast_to(np.asarray(alpha1, dtype=float), grid.shape).ravel()
    a0 = np.broadcast_to(np.asarray(alpha0, dtype=float), grid.shape).ravel()
    q = a1 * z / np.maximum(sm.pixel_magnitude(z), cfg.gamma1)
    p = a0 * e / np.maximum(sm.pixel_magnitude(e, tensor=True), cfg.gamma0)
    gu = u - np.asarray(f, dtype=float).ravel() - cfg.mu * (O.L @ u) + O.GT @ q.ravel()
    gw = cfg.alpha_reg * (w - O.L2 @ w) - q.ravel() + O.EtM @ p.ravel()
    return grid.h ** 2 * gu, grid.h ** 2 * gw
