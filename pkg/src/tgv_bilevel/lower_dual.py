"""Regularized predual TGV denoising solved by Newton path following.

The unknown is the symmetric tensor field ``p``.  Internally the solver
works with the scaled vector ``s = (p11, 2 p12, p22)`` so that every
Hessian is symmetric.  In these coordinates the Euclidean gradient of the
energy divided by ``h^2`` is the residual ``g_d`` paired with the
Frobenius inner product, so ``g_d`` is returned unscaled.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import operators as ops
from . import smoothing as sm
from .exceptions import ConvergenceError, SolverError
from .fields import TENSOR_WEIGHTS, GridSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DualSolverConfig:
    beta: float = 1e-3
    gamma: float = 0.0
    delta: float = 1e-6
    eps0_init: float = 1e3
    eps1_init: float = 1e3
    eps0_final: float = 1e-12
    eps1_final: float = 1e-12
    theta_eps: float = 0.05
    # Relative to the residual at p = 0, i.e. |grad^2 f|.
    newton_tol: float = 1e-9
    stage_tol_start: float = 1e-2
    max_newton: int = 200
    line_search: bool = True
    # Accept a stalled final stage if the residual is within this factor of tol.
    stagnation_factor: float = 1e3
    linear_solver: str = "direct"

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not 0 < self.theta_eps < 1:
            raise ValueError("theta_eps must lie in (0, 1)")
        if self.eps0_final > self.eps0_init or self.eps1_final > self.eps1_init:
            raise ValueError("final penalty parameters must not exceed the initial ones")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.linear_solver not in ("direct", "cg"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")

    def eps_schedule(self) -> list[tuple[float, float]]:
        e0, e1 = self.eps0_init, self.eps1_init
        out = [(e0, e1)]
        while e0 > self.eps0_final or e1 > self.eps1_final:
            e0 = max(self.theta_eps * e0, self.eps0_final)
            e1 = max(self.theta_eps * e1, self.eps1_final)
            out.append((e0, e1))
        return out


@dataclass
class DualResult:
    p: np.ndarray
    u: np.ndarray
    converged: bool
    stage_iterations: list[int] = field(default_factory=list)
    residual_history: list[float] = field(default_factory=list)
    eps: tuple[float, float] = (0.0, 0.0)

    @property
    def iterations(self) -> int:
        return sum(self.stage_iterations)


class _DualOps:
    def __init__(self, grid: GridSpec):
        self.grid = grid
        N = grid.size
        self.N = N
        winv = np.repeat(1.0 / TENSOR_WEIGHTS, N)
        self.winv = winv
        Minv = sp.diags(winv)
        self.div2 = ops.second_divergence(grid, scaled=True).matrix  # acts on s
        self.grad2 = self.div2.T.tocsr()
        self.fid = ops.grad2_div2_composed(grid, scaled=True).matrix
        self.div = (ops.divergence(grid).matrix @ Minv).tocsr()  # div p from s
        self.divT = self.div.T.tocsr()
        self.bilap = ops.bilaplacian(grid, scaled=True).matrix
        self.l2w = sp.diags(winv)


@lru_cache(maxsize=16)
def _dual_ops(grid: GridSpec) -> _DualOps:
    return _DualOps(grid)


def _eps(cfg, eps):
    return (cfg.eps0_final, cfg.eps1_final) if eps is None else eps


def _split(p, grid):
    """Unscaled tensor array -> scaled flat vector."""
    p = np.asarray(p, dtype=float).reshape(3, grid.n, grid.m)
    return (p * TENSOR_WEIGHTS[:, None, None]).ravel()


def _unsplit(s, grid):
    return (np.asarray(s).reshape(3, grid.n, grid.m) / TENSOR_WEIGHTS[:, None, None])


def _alpha_vec(alpha, grid, ncomp):
    a = np.broadcast_to(np.asarray(alpha, dtype=float), grid.shape)
    return np.tile(a.ravel(), ncomp)


def _energy_s(s, f, a0v, a1v, cfg, O, e0, e1) -> float:
    pu = s * O.winv
    q = O.div @ s
    r = f - O.div2 @ s
    val = 0.5 * cfg.beta * float(s @ (O.bilap @ s))
    val += 0.5 * cfg.gamma * float(s @ (O.winv * s))
    val += 0.5 * float(r @ r)
    val += float(np.sum(sm.g_delta(-(pu + a0v), cfg.delta) + sm.g_delta(pu - a0v, cfg.delta))) / e0
    val += float(np.sum(sm.g_delta(-(q + a1v), cfg.delta) + sm.g_delta(q - a1v, cfg.delta))) / e1
    return val


def dual_energy(p, f, alpha0, alpha1, cfg: DualSolverConfig, grid: GridSpec, eps=None) -> float:
    """Discrete regularized predual energy (``B = T = I``)."""
    O = _dual_ops(grid)
    e0, e1 = _eps(cfg, eps)
    f = np.asarray(f, dtype=float).ravel()
    val = _energy_s(_split(p, grid), f, _alpha_vec(alpha0, grid, 3), _alpha_vec(alpha1, grid, 2),
                    cfg, O, e0, e1)
    return grid.h ** 2 * val


def _gradient_s(s, f, a0v, a1v, cfg, O, e0, e1):
    pu = s * O.winv
    q = O.div @ s
    g = cfg.beta * (O.bilap @ s) + cfg.gamma * (O.winv * s)
    g += O.grad2 @ (O.div2 @ s - f)
    g += O.winv * sm.box_derivative(pu, a0v, cfg.delta) / e0
    g += O.divT @ sm.box_derivative(q, a1v, cfg.delta) / e1
    return g


def _hessian_s(s, a0v, a1v, cfg, O, e0, e1):
    pu = s * O.winv
    q = O.div @ s
    H = cfg.beta * O.bilap + O.fid
    diag = cfg.gamma * O.winv + O.winv ** 2 * sm.box_second(pu, a0v, cfg.delta) / e0
    H = H + sp.diags(diag)
    c = sm.box_second(q, a1v, cfg.delta) / e1
    if np.any(c):
        H = H + O.divT @ sp.diags(c) @ O.div
    return H.tocsc()


def dual_residual(p, f, alpha0, alpha1, cfg: DualSolverConfig, grid: GridSpec, eps=None) -> np.ndarray:
    """``g_d`` as an unscaled tensor array of shape ``(3, n, m)``.

    ``h^2 * sum(w_c * g_c * dp_c)`` with ``w = (1, 2, 1)`` is the directional
    derivative of :func:`dual_energy` along ``dp``.
    """
    O = _dual_ops(grid)
    e0, e1 = _eps(cfg, eps)
    s = _split(p, grid)
    f = np.asarray(f, dtype=float).ravel()
    g = _gradient_s(s, f, _alpha_vec(alpha0, grid, 3), _alpha_vec(alpha1, grid, 2), cfg, O, e0, e1)
    return g.reshape(3, grid.n, grid.m)


def residual_norm(g, grid: GridSpec) -> float:
    """Discrete Frobenius ``l2`` norm of a residual tensor."""
    g = np.asarray(g).reshape(3, -1)
    return grid.h * math.sqrt(float(np.sum(TENSOR_WEIGHTS[:, None] * g * g)))


def newton_matrix(p, alpha0, alpha1, cfg: DualSolverConfig, grid: GridSpec, eps=None) -> sp.csc_matrix:
    """Symmetric Newton matrix in scaled coordinates."""
    O = _dual_ops(grid)
    e0, e1 = _eps(cfg, eps)
    return _hessian_s(_split(p, grid), _alpha_vec(alpha0, grid, 3), _alpha_vec(alpha1, grid, 2), cfg, O, e0, e1)


def _solve(H, rhs, method="direct"):
    if method == "cg":
        x, info = spla.cg(H, rhs, rtol=1e-12, maxiter=10 * H.shape[0])
        if info != 0:
            raise SolverError(f"CG failed with info={info}")
    else:
        x = spla.spsolve(H, rhs)
    if not np.all(np.isfinite(x)):
        raise SolverError("linear solve returned non-finite values")
    return x


def dual_newton_step(p, f, alpha0, alpha1, cfg: DualSolverConfig, grid: GridSpec, eps=None) -> np.ndarray:
    """Newton increment ``dp`` (unscaled tensor array)."""
    O = _dual_ops(grid)
    e0, e1 = _eps(cfg, eps)
    s = _split(p, grid)
    f = np.asarray(f, dtype=float).ravel()
    a0v, a1v = _alpha_vec(alpha0, grid, 3), _alpha_vec(alpha1, grid, 2)
    g = _gradient_s(s, f, a0v, a1v, cfg, O, e0, e1)
    if not np.any(g):
        return np.zeros((3, grid.n, grid.m))
    H = _hessian_s(s, a0v, a1v, cfg, O, e0, e1)
    return _unsplit(_solve(H, -g, cfg.linear_solver), grid)


def recover_image(p, f, grid: GridSpec) -> np.ndarray:
    """``u = f - div^2 p``."""
    f = np.asarray(f, dtype=float)
    return f - ops.apply(ops.second_divergence(grid), p, f.shape)


def box_violation(p, alpha0, alpha1, grid: GridSpec) -> float:
    """``max(|p| - alpha0)^+ + max(|div p| - alpha1)^+`` over components."""
    p = np.asarray(p, dtype=float).reshape(3, grid.n, grid.m)
    q = ops.apply(ops.divergence(grid), p, (2, grid.n, grid.m))
    v0 = np.max(np.maximum(np.abs(p) - np.asarray(alpha0), 0.0))
    v1 = np.max(np.maximum(np.abs(q) - np.asarray(alpha1), 0.0))
    return float(v0 + v1)


def _step(s, ds, g, gnorm, fv, a0v, a1v, cfg, O, e0, e1):
    """Backtracking on the energy, falling back to the residual norm when
    the energy decrease is below roundoff."""
    s_new = s + ds
    if not cfg.line_search:
        return s_new, _gradient_s(s_new, fv, a0v, a1v, cfg, O, e0, e1), True
    E = _energy_s(s, fv, a0v, a1v, cfg, O, e0, e1)
    slope = float(g @ ds)
    noise = 1e-13 * max(abs(E), 1e-300)
    step = 1.0
    while step > 1e-10:
        En = _energy_s(s_new, fv, a0v, a1v, cfg, O, e0, e1)
        if En <= E + 1e-4 * step * slope and E - En > noise:
            return s_new, _gradient_s(s_new, fv, a0v, a1v, cfg, O, e0, e1), True
        if En <= E + noise:
            g_new = _gradient_s(s_new, fv, a0v, a1v, cfg, O, e0, e1)
            if np.linalg.norm(g_new) <= (1 - 1e-4 * step) * gnorm:
                return s_new, g_new, True
        step *= 0.5
        s_new = s + step * ds
    return s, g, False


def solve_lower_dual(f, alpha0, alpha1, cfg: DualSolverConfig, grid: GridSpec, p_init=None,
                     schedule=None, raise_on_failure: bool = True) -> DualResult:
    """Path-following Newton solve of ``g_d(p) = 0``.

    Each stage ``(eps0, eps1)`` is solved to its stage tolerance and warm
    starts the next; the final stage is solved to ``newton_tol``.  ``schedule``
    overrides the penalty sequence (e.g. only the final pair when warm
    starting from a nearby solution).
    """
    O = _dual_ops(grid)
    f = np.asarray(f, dtype=float)
    fv = f.ravel()
    a0v, a1v = _alpha_vec(alpha0, grid, 3), _alpha_vec(alpha1, grid, 2)
    s = np.zeros(3 * grid.size) if p_init is None else _split(p_init, grid)
    stages = cfg.eps_schedule() if schedule is None else list(schedule)
    ref = max(float(np.linalg.norm(O.grad2 @ fv)), 1e-300)
    tol_final = cfg.newton_tol
    nst = len(stages)
    if nst > 1:
        ratio = (tol_final / cfg.stage_tol_start) ** (1.0 / (nst - 1))
        tols = [cfg.stage_tol_start * ratio ** k for k in range(nst)]
    else:
        tols = [tol_final]
    tols[-1] = tol_final
    counts, history = [], []
    converged = True
    for (e0, e1), tol in zip(stages, tols):
        it = 0
        g = _gradient_s(s, fv, a0v, a1v, cfg, O, e0, e1)
        gn = float(np.linalg.norm(g)) / ref
        history.append(gn)
        while gn > tol:
            if it >= cfg.max_newton:
                converged = False
                break
            H = _hessian_s(s, a0v, a1v, cfg, O, e0, e1)
            ds = _solve(H, -g, cfg.linear_solver)
            s_new, g_new, ok = _step(s, ds, g, gn * ref, fv, a0v, a1v, cfg, O, e0, e1)
            if not ok:
                # Energy differences are at roundoff level.
                converged = gn <= cfg.stagnation_factor * tol
                if converged:
                    log.info("dual Newton stagnated at relative residual %.3e", gn)
                break
            s, g = s_new, g_new
            gn = float(np.linalg.norm(g)) / ref
            history.append(gn)
            it += 1
        counts.append(it)
        if not converged:
            break
    p = _unsplit(s, grid)
    res = DualResult(p, recover_image(p, f, grid), converged, counts, history, stages[-1])
    if not converged:
        msg = f"dual Newton did not converge within {cfg.max_newton} iterations"
        if raise_on_failure:
            raise ConvergenceError(msg, history)
        log.warning(msg)
    return res


def resolution_scaled_weights(alpha0_unit: float, alpha1_unit: float, grid: GridSpec) -> tuple[float, float]:
    """Convert weights for ``h = 1`` into the equivalent weights on ``grid``.

    ``alpha1`` scales with ``h`` and ``alpha0`` with ``h^2``.
    """
    return alpha0_unit * grid.h ** 2, alpha1_unit * grid.h
