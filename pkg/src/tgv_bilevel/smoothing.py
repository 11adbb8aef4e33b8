"""Pointwise piecewise-smooth functions and feasibility projections."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import TENSOR_WEIGHTS


@dataclass(frozen=True)
class HuberParam:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("Huber radius must be positive")


@dataclass(frozen=True)
class PenaltyParam:
    delta: float
    eps0: float = 1.0
    eps1: float = 1.0

    def __post_init__(self):
        if not (self.delta > 0 and self.eps0 > 0 and self.eps1 > 0):
            raise ValueError("delta, eps0 and eps1 must be positive")


def pixel_magnitude(v, tensor: bool = False) -> np.ndarray:
    """Euclidean (vector) or Frobenius (symmetric tensor) norm per pixel.

    Tensors are given unscaled as ``(p11, p12, p22)``; the off-diagonal
    entry counts twice.
    """
    v = np.asarray(v, dtype=float)
    if tensor:
        w = TENSOR_WEIGHTS.reshape((3,) + (1,) * (v.ndim - 1))
        return np.sqrt(np.sum(w * v * v, axis=0))
    return np.sqrt(np.sum(v * v, axis=0))


def huber_scalar(r, gamma: float) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return np.where(r >= gamma, r - 0.5 * gamma, r * r / (2.0 * gamma))


def huber(v, gamma: float, tensor: bool = False) -> np.ndarray:
    """Huber function of the per-pixel magnitude of ``v``."""
    return huber_scalar(pixel_magnitude(v, tensor), gamma)


def g_delta(t, delta: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    tp = np.maximum(t, 0.0)
    return np.where(
        t >= delta,
        0.5 * t * t - 0.5 * delta * t + delta * delta / 6.0,
        tp ** 3 / (6.0 * delta),
    )


def g_delta_prime(t, delta: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    tp = np.maximum(t, 0.0)
    return np.where(t >= delta, t - 0.5 * delta, tp * tp / (2.0 * delta))


def g_delta_second(t, delta: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.where(t >= delta, 1.0, np.maximum(t, 0.0) / delta)


def _box_terms(x, alpha, delta):
    return g_delta(-(x + alpha), delta) + g_delta(x - alpha, delta)


def penalty_P(q, alpha1, delta: float, h: float = 1.0) -> float:
    """Two-sided box penalty of a vector field, ``h^2`` times the pixel sum."""
    q = np.asarray(q, dtype=float)
    return h * h * float(np.sum(_box_terms(q, np.asarray(alpha1, dtype=float), delta)))


def penalty_Q(p, alpha0, delta: float, h: float = 1.0) -> float:
    """Box penalty over the three stored components ``p11, p12, p22``."""
    p = np.asarray(p, dtype=float)
    return h * h * float(np.sum(_box_terms(p, np.asarray(alpha0, dtype=float), delta)))


def box_derivative(x, alpha, delta: float) -> np.ndarray:
    """``G'(x - alpha) - G'(-x - alpha)``: derivative of the box terms in ``x``."""
    return g_delta_prime(x - alpha, delta) - g_delta_prime(-x - alpha, delta)


def box_second(x, alpha, delta: float) -> np.ndarray:
    """``G''(x - alpha) + G''(-x - alpha)``."""
    return g_delta_second(x - alpha, delta) + g_delta_second(-x - alpha, delta)


def box_alpha_derivative(x, alpha, delta: float) -> np.ndarray:
    """Derivative of the box terms with respect to the bound ``alpha``."""
    return -g_delta_prime(x - alpha, delta) - g_delta_prime(-x - alpha, delta)


def box_mixed_derivative(x, alpha, delta: float) -> np.ndarray:
    """``d/d alpha`` of :func:`box_derivative`: ``-G''(x-a) + G''(-x-a)``."""
    return -g_delta_second(x - alpha, delta) + g_delta_second(-x - alpha, delta)


def penalty_gradients(q, p, alpha0, alpha1, delta: float):
    """Componentwise derivative fields of the two box penalties.

    Returns ``(P, Q, dP_dalpha1, dQ_dalpha0)`` where ``P`` and ``Q`` are the
    derivatives with respect to ``q`` and ``p`` and the last two are the
    pointwise derivatives with respect to the bounds, summed over components.
    The ``h^2`` quadrature weight is not included.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    P = box_derivative(q, alpha1, delta)
    Q = box_derivative(p, alpha0, delta)
    dP = box_alpha_derivative(q, alpha1, delta).sum(axis=0)
    dQ = box_alpha_derivative(p, alpha0, delta).sum(axis=0)
    return P, Q, dP, dQ


def _check_smooth_max(gamma, delta):
    if not np.all(0.5 * np.asarray(delta) < np.asarray(gamma)):
        raise ValueError("smoothed max requires delta/2 < gamma")


def smooth_max(r, gamma: float, delta: float) -> np.ndarray:
    _check_smooth_max(gamma, delta)
    r = np.asarray(r, dtype=float)
    lo, hi = gamma - 0.5 * delta, gamma + 0.5 * delta
    mid = (r + 0.5 * delta - gamma) ** 2 / (2.0 * delta) + gamma
    return np.where(r <= lo, gamma, np.where(r >= hi, r, mid))


def smooth_max_deriv(r, gamma: float, delta: float) -> np.ndarray:
    _check_smooth_max(gamma, delta)
    r = np.asarray(r, dtype=float)
    lo, hi = gamma - 0.5 * delta, gamma + 0.5 * delta
    mid = (r + 0.5 * delta - gamma) / delta
    return np.where(r <= lo, 0.0, np.where(r >= hi, 1.0, mid))


def _radial(x, bound, tensor):
    mag = pixel_magnitude(x, tensor)
    scale = np.maximum(1.0, mag / np.asarray(bound, dtype=float))
    return x / scale


def project_feasible(qt, pt, alpha1, alpha0, mode: str = "pixel"):
    """Project dual variables onto ``|q| <= alpha1`` and ``|p| <= alpha0``.

    ``mode="pixel"`` scales each pixel vector radially (Euclidean for ``q``,
    Frobenius for ``p``).  ``mode="component"`` clips every scalar
    component separately.
    """
    qt = np.asarray(qt, dtype=float)
    pt = np.asarray(pt, dtype=float)
    if mode == "pixel":
        return _radial(qt, alpha1, False), _radial(pt, alpha0, True)
    if mode == "component":
        a1 = np.asarray(alpha1, dtype=float)
        a0 = np.asarray(alpha0, dtype=float)
        return np.clip(qt, -a1, a1), np.clip(pt, -a0, a0)
    raise ValueError(f"unknown projection mode {mode!r}")
