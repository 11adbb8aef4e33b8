"""Bilevel weight learning with the predual lower-level solver.

``alpha0`` is a scalar and ``alpha1`` a field.  Derivatives are returned
in two forms: the Euclidean derivative ``dJ`` (so ``sum(dJ * da)`` is the
directional derivative) and its ``l2(Omega_h)`` representative
``dJ / h^2`` used for the Riesz map.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import lower_dual as ld
from . import smoothing as sm
from . import upper
from .descent import ArmijoParams, Evaluation, projected_armijo
from .exceptions import ConvergenceError, SolverError
from .fields import GridSpec
from .projection import ProjectionSpec, clamp_scalar, project_h1, riesz_matrix

log = logging.getLogger(__name__)

# Resolution at which the default weights and bounds are stated.
REFERENCE_SIZE = 256


@dataclass(frozen=True)
class BilevelDualConfig:
    lam: float = 1e-11
    alpha0_bounds: tuple[float, float] = (1e-7, 1e-2)
    alpha1_bounds: tuple[float, float] = (1e-7, 1e-2)
    tau0_init: float = 1.0
    tau1_init: float = 1e-12
    c: float = 1e-8
    theta_minus: float = 0.25
    theta_plus: float = 2.0
    max_outer: int = 30
    max_shrinks: int = 40
    # Relative weight change that stops the loop early; 0 runs max_outer iterations.
    proximity_tol: float = 0.0
    eps_alpha: float = 1e-10
    laplacian_weight: float = 1.0
    alpha0_init: float = 3.125e-6
    alpha1_init: float = 9e-4
    # Rescale weights and bounds from the reference resolution to the grid.
    rescale: bool = True
    warm_start: bool = False
    solver: ld.DualSolverConfig = field(default_factory=ld.DualSolverConfig)

    def __post_init__(self):
        ArmijoParams(self.c, self.theta_minus, self.theta_plus, self.max_shrinks)
        for lo, hi in (self.alpha0_bounds, self.alpha1_bounds):
            if not 0 < lo < hi:
                raise ValueError("bounds must satisfy 0 < lower < upper")
        if self.lam < 0 or self.eps_alpha <= 0 or self.laplacian_weight <= 0:
            raise ValueError("lam >= 0, eps_alpha > 0 and laplacian_weight > 0 required")

    def scaled(self, grid: GridSpec) -> "BilevelDualConfig":
        """Weights and bounds converted from ``h = 1/256`` to ``grid.h``."""
        if not self.rescale:
            return self
        r = grid.h * REFERENCE_SIZE
        b0 = tuple(v * r * r for v in self.alpha0_bounds)
        b1 = tuple(v * r for v in self.alpha1_bounds)
        from dataclasses import replace
        return replace(self, alpha0_bounds=b0, alpha1_bounds=b1,
                       alpha0_init=self.alpha0_init * r * r, alpha1_init=self.alpha1_init * r,
                       rescale=False)


def _alpha1_field(alpha1, grid):
    return np.broadcast_to(np.asarray(alpha1, dtype=float), grid.shape).copy()


def adjoint_rhs(p, f, spec: upper.CorridorSpec, grid: GridSpec) -> np.ndarray:
    """``-dJ/ds`` in scaled coordinates, ``s = (p11, 2p12, p22)``."""
    O = ld._dual_ops(grid)
    u = ld.recover_image(p, f, grid)
    gu = upper.residual_objective_grad(u, f, spec, grid).ravel()
    # u = f - div2 s, so dJ/ds = -div2^T dJ/du.
    return O.grad2 @ gu


def solve_adjoint_dual(p, alpha0, alpha1, f, cfg: ld.DualSolverConfig, spec: upper.CorridorSpec,
                       grid: GridSpec, eps=None) -> np.ndarray:
    """Adjoint state in scaled coordinates (flat vector of length ``3N``)."""
    rhs = adjoint_rhs(p, f, spec, grid)
    if not np.any(rhs):
        return np.zeros_like(rhs)
    H = ld.newton_matrix(p, alpha0, alpha1, cfg, grid, eps)
    lam = spla.spsolve(H, rhs)
    if not np.all(np.isfinite(lam)):
        raise SolverError("adjoint solve failed")
    return lam


def reduced_derivatives_dual(p, adj, alpha0, alpha1, cfg: ld.DualSolverConfig, lam: float,
                             grid: GridSpec, riesz=None, eps=None):
    """Euclidean derivatives ``(dJ/dalpha0, dJ/dalpha1)`` of the reduced objective.

    ``alpha1`` scalar gives a scalar derivative; a field gives a field and
    includes the ``lam/2 |alpha1|_{H^1}^2`` term.
    """
    O = ld._dual_ops(grid)
    e0, e1 = ld._eps(cfg, eps)
    s = ld._split(p, grid)
    pu = s * O.winv
    q = O.div @ s
    N = grid.size
    a0v = ld._alpha_vec(alpha0, grid, 3)
    a1v = ld._alpha_vec(alpha1, grid, 2)
    adj = np.asarray(adj).ravel()
    d0 = float(np.sum(adj * O.winv * sm.box_mixed_derivative(pu, a0v, cfg.delta))) / e0
    t1 = (O.div @ adj) * sm.box_mixed_derivative(q, a1v, cfg.delta) / e1
    d1 = t1[:N] + t1[N:]
    if np.ndim(alpha1) == 0:
        return d0, float(np.sum(d1))
    d1 = d1.reshape(grid.shape)
    if lam:
        K = riesz if riesz is not None else riesz_matrix(grid)
        d1 = d1 + lam * grid.h ** 2 * (K @ np.asarray(alpha1, dtype=float).ravel()).reshape(grid.shape)
    return d0, d1


def reduced_gradients_dual(derivs, grid: GridSpec, lap_weight: float = 1.0, riesz=None):
    """``g0 = dJ/dalpha0``; ``g1 = (I - w Delta_N)^{-1} dJ/dalpha1`` in ``l2(Omega_h)``."""
    d0, d1 = derivs
    if np.ndim(d1) == 0:
        return d0, d1
    K = riesz if riesz is not None else riesz_matrix(grid, lap_weight)
    g1 = spla.spsolve(K.tocsc(), np.asarray(d1, dtype=float).ravel() / grid.h ** 2)
    return d0, g1.reshape(grid.shape)


@dataclass
class BilevelDualResult:
    alpha0: float
    alpha1: np.ndarray
    p: np.ndarray
    u: np.ndarray
    history: object


def reduced_objective_dual(f, alpha0, alpha1, cfg: BilevelDualConfig, spec: upper.CorridorSpec,
                           grid: GridSpec, riesz=None, p_init=None, schedule=None):
    """Solve the lower level and evaluate ``J``; returns ``(J, F, reg, DualResult)``."""
    res = ld.solve_lower_dual(f, alpha0, alpha1, cfg.solver, grid, p_init=p_init, schedule=schedule)
    F = upper.residual_objective(res.u, f, spec, grid)
    reg = 0.0
    if np.ndim(alpha1) > 0 and cfg.lam:
        K = riesz if riesz is not None else riesz_matrix(grid, cfg.laplacian_weight)
        reg = upper.weight_penalty(alpha1, cfg.lam, K, grid)
    return F + reg, F, reg, res


def run_bilevel_dual(f, cfg: BilevelDualConfig, spec: upper.CorridorSpec, grid: GridSpec | None = None,
                     truth=None, alpha0_init=None, alpha1_init=None) -> BilevelDualResult:
    """Projected gradient method over ``(alpha0 scalar, alpha1 field)``."""
    from .metrics import psnr, ssim
    f = np.asarray(f, dtype=float)
    grid = GridSpec.dual(*f.shape) if grid is None else grid
    cfg = cfg.scaled(grid)
    K = riesz_matrix(grid, cfg.laplacian_weight)
    pspec = ProjectionSpec(cfg.alpha1_bounds[0], cfg.alpha1_bounds[1], cfg.eps_alpha, cfg.laplacian_weight)
    a0 = cfg.alpha0_init if alpha0_init is None else float(alpha0_init)
    a1 = _alpha1_field(cfg.alpha1_init if alpha1_init is None else alpha1_init, grid)
    final = [cfg.solver.eps_schedule()[-1]]

    def evaluate(alphas, warm):
        try:
            J, F, reg, res = None, None, None, None
            if cfg.warm_start and warm is not None:
                try:
                    J, F, reg, res = reduced_objective_dual(f, alphas[0], alphas[1], cfg, spec, grid, K,
                                                            p_init=warm.p, schedule=final)
                except ConvergenceError:
                    res = None
            if res is None:
                J, F, reg, res = reduced_objective_dual(f, alphas[0], alphas[1], cfg, spec, grid, K)
        except (ConvergenceError, SolverError) as exc:
            log.info("lower-level failure at trial point: %s", exc)
            return Evaluation(np.inf, np.inf, np.inf, None, 0, ok=False)
        return Evaluation(J, F, reg, res, res.iterations)

    def derivatives(ev, alphas):
        res = ev.state
        adj = solve_adjoint_dual(res.p, alphas[0], alphas[1], f, cfg.solver, spec, grid)
        d0, d1 = reduced_derivatives_dual(res.p, adj, alphas[0], alphas[1], cfg.solver, cfg.lam, grid, K)
        g0, g1 = reduced_gradients_dual((d0, d1), grid, riesz=K)
        return [(d0, g0), (d1, g1)]

    def project(i, val):
        if i == 0:
            return float(clamp_scalar(val, *cfg.alpha0_bounds))
        return project_h1(val, grid, pspec)

    monitor = None
    if truth is not None:
        def monitor(ev, alphas):
            return dict(psnr=psnr(ev.state.u, truth), ssim=ssim(ev.state.u, truth))

    params = ArmijoParams(cfg.c, cfg.theta_minus, cfg.theta_plus, cfg.max_shrinks)
    alphas, ev, hist = projected_armijo([a0, a1], [cfg.tau0_init, cfg.tau1_init], evaluate, derivatives,
                                        project, params, cfg.max_outer, monitor=monitor,
                                        proximity_tol=cfg.proximity_tol)
    return BilevelDualResult(alphas[0], alphas[1], ev.state.p, ev.state.u, hist)
