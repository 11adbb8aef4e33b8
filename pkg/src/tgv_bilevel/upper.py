"""Localized residuals and the corridor objective of the upper level."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import operators as ops
from .fields import GridSpec


def sigma_corridor(sigma2: float, n_w: int) -> tuple[float, float]:
    """Variance corridor ``sigma2 * (1 -+ sqrt(2)/n_w)``."""
    if sigma2 <= 0:
        raise ValueError("noise variance must be positive")
    if n_w <= math.sqrt(2):
        raise ValueError(f"window size {n_w} gives a non-positive lower bound")
    r = math.sqrt(2.0) / n_w
    return sigma2 * (1.0 - r), sigma2 * (1.0 + r)


@dataclass(frozen=True)
class CorridorSpec:
    sigma2: float
    n_w: int = 7
    sigma2_lo: float | None = None
    sigma2_hi: float | None = None
    boundary: str = "renormalize"

    def __post_init__(self):
        if self.n_w < 1 or self.n_w % 2 == 0:
            raise ValueError("window size must be a positive odd integer")
        lo, hi = self.sigma2_lo, self.sigma2_hi
        if lo is None or hi is None:
            lo, hi = sigma_corridor(self.sigma2, self.n_w)
            object.__setattr__(self, "sigma2_lo", lo)
            object.__setattr__(self, "sigma2_hi", hi)
        if not 0 < lo < self.sigma2 < hi:
            raise ValueError("corridor must satisfy 0 < lo < sigma2 < hi")
        if self.boundary not in ("renormalize", "zero"):
            raise ValueError(f"unknown filter boundary {self.boundary!r}")


def box_sum(g: np.ndarray, n_w: int) -> np.ndarray:
    """Sum over the ``n_w x n_w`` window centred at each pixel (zero outside)."""
    r = n_w // 2
    n, m = g.shape
    padded = np.zeros((n + 2 * r, m + 2 * r))
    padded[r:r + n, r:r + m] = g
    out = np.zeros((n, m))
    for di in range(n_w):
        for dj in range(n_w):
            out += padded[di:di + n, dj:dj + m]
    return out


def window_weights(shape, spec: CorridorSpec) -> np.ndarray:
    """Per-pixel filter weight ``w(x, y)``; constant inside each window."""
    if spec.boundary == "zero":
        return np.full(shape, 1.0 / spec.n_w ** 2)
    return 1.0 / box_sum(np.ones(shape), spec.n_w)


def apply_filter(g, spec: CorridorSpec) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    return box_sum(g, spec.n_w) * window_weights(g.shape, spec)


def apply_filter_adjoint(r, spec: CorridorSpec) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return box_sum(r * window_weights(r.shape, spec), spec.n_w)


def localized_residual(u, f, spec: CorridorSpec) -> np.ndarray:
    """Windowed mean of ``(u - f)^2``."""
    d = np.asarray(u, dtype=float) - np.asarray(f, dtype=float)
    return apply_filter(d * d, spec)


def corridor_excess(v, spec: CorridorSpec) -> np.ndarray:
    """``(v - hi)^+ - (lo - v)^+``, the pointwise derivative of ``F``."""
    v = np.asarray(v, dtype=float)
    return np.maximum(v - spec.sigma2_hi, 0.0) - np.maximum(spec.sigma2_lo - v, 0.0)


def objective_F(v, spec: CorridorSpec, grid: GridSpec) -> float:
    v = np.asarray(v, dtype=float)
    over = np.maximum(v - spec.sigma2_hi, 0.0)
    under = np.maximum(spec.sigma2_lo - v, 0.0)
    return 0.5 * grid.h ** 2 * float(np.sum(over * over) + np.sum(under * under))


def residual_objective(u, f, spec: CorridorSpec, grid: GridSpec) -> float:
    return objective_F(localized_residual(u, f, spec), spec, grid)


def residual_objective_grad(u, f, spec: CorridorSpec, grid: GridSpec) -> np.ndarray:
    """Euclidean gradient of ``F(R(u))`` with respect to the pixel values of ``u``."""
    d = np.asarray(u, dtype=float) - np.asarray(f, dtype=float)
    rho = corridor_excess(apply_filter(d * d, spec), spec)
    return 2.0 * grid.h ** 2 * d * apply_filter_adjoint(rho, spec)


def weight_penalty(alpha, lam: float, riesz, grid: GridSpec) -> float:
    """``lam/2 * ||alpha||_{H^1}^2`` with ``riesz = I - Delta_N`` (possibly weighted)."""
    if lam == 0:
        return 0.0
    a = np.asarray(alpha, dtype=float).ravel()
    return 0.5 * lam * grid.h ** 2 * float(a @ (riesz @ a))


def upper_value_dual(p, f, alpha1, lam: float, spec: CorridorSpec, grid: GridSpec, riesz=None) -> float:
    """Upper objective of the dual formulation, residual written through ``div^2 p``."""
    n, m = grid.shape
    d2p = ops.apply(ops.second_divergence(grid), p, (n, m))
    # T = B = I: the residual u - f is -div^2 p.
    rv = apply_filter(d2p * d2p, spec)
    val = objective_F(rv, spec, grid)
    if lam and np.ndim(alpha1) > 0:
        if riesz is None:
            riesz = _default_riesz(grid)
        val += weight_penalty(alpha1, lam, riesz, grid)
    return val


def upper_value_pd(u, f, alpha0, alpha1, lam0: float, lam1: float, spec: CorridorSpec,
                   grid: GridSpec, riesz=None) -> float:
    val = residual_objective(u, f, spec, grid)
    if riesz is None and (lam0 or lam1):
        riesz = _default_riesz(grid)
    if lam1 and np.ndim(alpha1) > 0:
        val += weight_penalty(alpha1, lam1, riesz, grid)
    if lam0 and np.ndim(alpha0) > 0:
        val += weight_penalty(alpha0, lam0, riesz, grid)
    return val


def _default_riesz(grid: GridSpec):
    return (sp.identity(grid.size) - ops.neumann_laplacian(grid).matrix).tocsr()
