"""Bilevel weight learning with the primal-dual (Huber) lower-level solver.

``alpha1`` is a field; ``alpha0`` is a scalar or, in spatial mode, a field.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import lower_pd as lp
from . import upper
from .descent import ArmijoParams, Evaluation, projected_armijo
from .exceptions import ConvergenceError, SolverError
from .fields import GridSpec
from .projection import ProjectionSpec, clamp_scalar, project_h1, riesz_matrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BilevelPDConfig:
    lambda0: float = 1e-11
    lambda1: float = 1e-11
    alpha0_bounds: tuple[float, float] = (1e-2, 10.0)
    alpha1_bounds: tuple[float, float] = (1e-4, 10.0)
    tau0_init: float = 0.05
    tau1_init: float = 100.0
    c: float = 1e-9
    theta_minus: float = 0.25
    theta_plus: float = 2.0
    max_outer: int = 40
    max_shrinks: int = 40
    # Relative weight change that stops the loop early; 0 runs max_outer iterations.
    proximity_tol: float = 0.0
    eps_alpha: float = 1e-6
    laplacian_weight: float = 6e4
    alpha0_mode: str = "scalar"
    alpha0_init: float = 0.2
    alpha1_init: float = 0.25
    optimize_alpha1: bool = True
    solver: lp.PDSolverConfig = field(default_factory=lp.PDSolverConfig)

    def __post_init__(self):
        ArmijoParams(self.c, self.theta_minus, self.theta_plus, self.max_shrinks)
        for lo, hi in (self.alpha0_bounds, self.alpha1_bounds):
            if not 0 < lo < hi:
                raise ValueError("bounds must satisfy 0 < lower < upper")
        if self.alpha0_mode not in ("scalar", "spatial"):
            raise ValueError(f"unknown alpha0 mode {self.alpha0_mode!r}")
        if self.laplacian_weight <= 0 or self.eps_alpha <= 0:
            raise ValueError("laplacian_weight and eps_alpha must be positive")
        if self.lambda0 < 0 or self.lambda1 < 0:
            raise ValueError("lambda0, lambda1 must be non-negative")

    @property
    def effective_lambda0(self) -> float:
        # A scalar alpha0 carries no H^1 penalty.
        return self.lambda0 if self.alpha0_mode == "spatial" else 0.0


def objective_gradient_u(u, f, spec: upper.CorridorSpec, grid: GridSpec) -> np.ndarray:
    return upper.residual_objective_grad(u, f, spec, grid)


def solve_adjoint_pd(x: lp.KKTState, f, alpha0, alpha1, cfg: lp.PDSolverConfig,
                     spec: upper.CorridorSpec, grid: GridSpec | None = None,
                     return_residual: bool = False):
    """Solve ``[A^T C^T; B^T D^T] (y1, y2) = (-dJ/du, 0, 0)`` by Schur elimination.

    Returns a :class:`KKTState` holding ``(u*, w*, q*, p*)``.
    """
    grid = lp._grid_for(f, grid)
    n, m = grid.shape
    N = grid.size
    A, B, C, D, _, _ = lp.assemble_kkt_blocks(x, f, alpha0, alpha1, cfg, grid)
    rhs1 = np.concatenate([-objective_gradient_u(x.u, f, spec, grid).ravel(), np.zeros(2 * N)])
    Dinv = 1.0 / D.diagonal()
    if np.any(rhs1):
        S = (A.T - C.T @ sp.diags(Dinv) @ B.T).tocsc()
        y1 = spla.spsolve(S, rhs1)
        if not np.all(np.isfinite(y1)):
            raise SolverError("adjoint Schur solve failed")
    else:
        y1 = np.zeros(3 * N)
    y2 = -Dinv * (B.T @ y1)
    adj = lp.KKTState(y1[:N].reshape(n, m), y1[N:].reshape(2, n, m),
                      y2[:2 * N].reshape(2, n, m), y2[2 * N:].reshape(3, n, m))
    if return_residual:
        r1 = A.T @ y1 + C.T @ y2 - rhs1
        r2 = B.T @ y1 + D.T @ y2
        return adj, float(np.linalg.norm(np.concatenate([r1, r2])))
    return adj


def reduced_derivatives_pd(x: lp.KKTState, adj: lp.KKTState, alpha0, alpha1, cfg: BilevelPDConfig,
                           grid: GridSpec | None = None, riesz=None):
    """Euclidean derivatives ``(dJ/dalpha0, dJ/dalpha1)``.

    ``dJ/dalpha1 = -sum_c (grad u - w)_c q*_c + lambda1 h^2 K alpha1`` and
    ``dJ/dalpha0 = -sum_c (E w)_c p*_c (+ lambda0 h^2 K alpha0)``, the sum
    running over the stored tensor components.  A scalar weight gets the
    pixel sum.
    """
    grid = lp._grid_for(x.u, grid)
    O = lp._pd_ops(grid)
    N = grid.size
    _, _, z, e, _, _ = lp._pieces(x, O, cfg.solver)
    t1 = -np.sum(z * adj.q.reshape(2, N), axis=0)
    t0 = -np.sum(e * adj.p.reshape(3, N), axis=0)
    K = riesz if riesz is not None else riesz_matrix(grid, cfg.laplacian_weight)
    h2 = grid.h ** 2

    def finish(t, alpha, lam):
        if np.ndim(alpha) == 0:
            return float(np.sum(t))
        d = t.copy()
        if lam:
            d = d + lam * h2 * (K @ np.asarray(alpha, dtype=float).ravel())
        return d.reshape(grid.shape)

    return finish(t0, alpha0, cfg.effective_lambda0), finish(t1, alpha1, cfg.lambda1)


def reduced_gradients_pd(derivs, grid: GridSpec, riesz):
    out = []
    for d in derivs:
        if np.ndim(d) == 0:
            out.append(d)
        else:
            out.append(spla.spsolve(riesz.tocsc(), np.ravel(d) / grid.h ** 2).reshape(grid.shape))
    return tuple(out)


def reduced_objective_pd(f, alpha0, alpha1, cfg: BilevelPDConfig, spec: upper.CorridorSpec,
                         grid: GridSpec, riesz=None, x_init=None):
    """Solve the lower level and evaluate ``J``; returns ``(J, F, reg, PDResult)``."""
    res = lp.pd_newton_solve(f, alpha0, alpha1, cfg.solver, x_init, grid)
    K = riesz if riesz is not None else riesz_matrix(grid, cfg.laplacian_weight)
    F = upper.residual_objective(res.u, f, spec, grid)
    reg = 0.0
    if np.ndim(alpha1) > 0 and cfg.lambda1:
        reg += upper.weight_penalty(alpha1, cfg.lambda1, K, grid)
    if np.ndim(alpha0) > 0 and cfg.effective_lambda0:
        reg += upper.weight_penalty(alpha0, cfg.effective_lambda0, K, grid)
    return F + reg, F, reg, res


@dataclass
class BilevelPDResult:
    alpha0: float | np.ndarray
    alpha1: np.ndarray
    u: np.ndarray
    state: lp.KKTState
    history: object


def run_bilevel_pd(f, cfg: BilevelPDConfig, spec: upper.CorridorSpec, grid: GridSpec | None = None,
                   truth=None, alpha0_init=None, alpha1_init=None) -> BilevelPDResult:
    """Projected gradient method with warm-started primal-dual lower solves."""
    from .metrics import psnr, ssim
    f = np.asarray(f, dtype=float)
    grid = GridSpec.primal_dual(*f.shape) if grid is None else grid
    K = riesz_matrix(grid, cfg.laplacian_weight)
    a0 = cfg.alpha0_init if alpha0_init is None else alpha0_init
    a0 = float(a0) if cfg.alpha0_mode == "scalar" else np.broadcast_to(np.asarray(a0, float), grid.shape).copy()
    a1 = np.broadcast_to(np.asarray(cfg.alpha1_init if alpha1_init is None else alpha1_init, float),
                         grid.shape).copy()
    pspecs = {0: ProjectionSpec(*cfg.alpha0_bounds, cfg.eps_alpha, cfg.laplacian_weight),
              1: ProjectionSpec(*cfg.alpha1_bounds, cfg.eps_alpha, cfg.laplacian_weight)}

    def evaluate(alphas, warm):
        try:
            J, F, reg, res = reduced_objective_pd(f, alphas[0], alphas[1], cfg, spec, grid, K, warm)
        except (ConvergenceError, SolverError) as exc:
            log.info("lower-level failure at trial point: %s", exc)
            return Evaluation(np.inf, np.inf, np.inf, None, 0, ok=False)
        r = res.history[-1]
        extra = {"kkt_r1": r[0], "kkt_r2": r[1], "kkt_r3": r[2], "kkt_r4": r[3]}
        return Evaluation(J, F, reg, res.state, res.iterations, extra=extra)

    def derivatives(ev, alphas):
        adj = solve_adjoint_pd(ev.state, f, alphas[0], alphas[1], cfg.solver, spec, grid)
        d = reduced_derivatives_pd(ev.state, adj, alphas[0], alphas[1], cfg, grid, K)
        g = reduced_gradients_pd(d, grid, K)
        return list(zip(d, g))

    def project(i, val):
        if np.ndim(val) == 0:
            b = cfg.alpha0_bounds if i == 0 else cfg.alpha1_bounds
            return float(clamp_scalar(val, *b))
        return project_h1(val, grid, pspecs[i])

    monitor = None
    if truth is not None:
        def monitor(ev, alphas):
            return dict(psnr=psnr(ev.state.u, truth), ssim=ssim(ev.state.u, truth))

    free = (0, 1) if cfg.optimize_alpha1 else (0,)
    from .history import RunHistory
    hist = RunHistory(extra_columns=("kkt_r1", "kkt_r2", "kkt_r3", "kkt_r4"))
    params = ArmijoParams(cfg.c, cfg.theta_minus, cfg.theta_plus, cfg.max_shrinks)
    alphas, ev, hist = projected_armijo([a0, a1], [cfg.tau0_init, cfg.tau1_init], evaluate, derivatives,
                                        project, params, cfg.max_outer, free=free, monitor=monitor,
                                        history=hist, proximity_tol=cfg.proximity_tol)
    return BilevelPDResult(alphas[0], alphas[1], ev.state.u, ev.state, hist)
