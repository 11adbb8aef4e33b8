"""Image quality metrics, seeded noise and synthetic phantoms."""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import gaussian_filter

PSNR_IDENTICAL = math.inf

PHANTOMS = ("affine-ramp", "piecewise-constant", "piecewise-affine", "oscillatory")


def psnr(u, u_true, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; identical images give ``inf``."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    u = np.asarray(u, dtype=float)
    t = np.asarray(u_true, dtype=float)
    if u.shape != t.shape:
        raise ValueError("images must have the same shape")
    mse = float(np.mean((u - t) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(peak * peak / mse)


def ssim(u, u_true, data_range: float = 1.0, sigma: float = 1.5, radius: int = 5) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5).

    Local statistics use population covariances and symmetric boundary
    extension; the mean is taken over pixels whose window lies inside the
    image.
    """
    x = np.asarray(u, dtype=float)
    y = np.asarray(u_true, dtype=float)
    if x.shape != y.shape:
        raise ValueError("images must have the same shape")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    trunc = (radius + 0.5) / sigma - 1e-9

    def filt(a):
        return gaussian_filter(a, sigma=sigma, mode="reflect", truncate=trunc)

    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cxy = filt(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    if min(s.shape) > 2 * radius:
        s = s[radius:-radius, radius:-radius]
    return float(np.mean(s))


def add_gaussian_noise(u, sigma2: float, seed: int = 0) -> np.ndarray:
    """``u + eta`` with i.i.d. ``N(0, sigma2)`` entries; no clipping."""
    if sigma2 < 0:
        raise ValueError("noise variance must be non-negative")
    u = np.asarray(u, dtype=float)
    if sigma2 == 0:
        return u.copy()
    rng = np.random.default_rng(seed)
    return u + math.sqrt(sigma2) * rng.standard_normal(u.shape)


def make_phantom(kind: str, n: int, m: int | None = None) -> np.ndarray:
    """Deterministic synthetic test images with values in ``[0, 1]``."""
    m = n if m is None else m
    x = (np.arange(n) + 0.5)[:, None] / n
    y = (np.arange(m) + 0.5)[None, :] / m
    if kind == "affine-ramp":
        return 0.2 + 0.4 * x + 0.3 * y + 0 * x * y
    if kind == "piecewise-constant":
        u = np.full((n, m), 0.2)
        u[(np.abs(x - 0.5) < 0.35) & (np.abs(y - 0.5) < 0.35)] = 0.5
        u[(x - 0.45) ** 2 + (y - 0.55) ** 2 < 0.2 ** 2] = 0.85
        return u
    if kind == "piecewise-affine":
        ramp = 0.15 + 0.5 * y + 0 * x
        return np.where(x + 0.3 * y > 0.6, ramp + 0.3 - 0.4 * x, ramp)
    if kind == "oscillatory":
        u = 0.2 + 0.5 * x + 0 * y
        patch = (np.abs(x - 0.5) < 0.25) & (np.abs(y - 0.5) < 0.25)
        return np.where(patch, u + 0.15 * np.sin(2 * np.pi * 6 * y), u)
    raise ValueError(f"unknown phantom {kind!r}; choose from {', '.join(PHANTOMS)}")
