"""Penalized H^1 box projection by semismooth Newton, and the scalar clamp."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import GridSpec
from .operators import neumann_laplacian


class ProjectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProjectionSpec:
    lower: float | np.ndarray
    upper: float | np.ndarray
    eps_alpha: float = 1e-10
    lap_weight: float = 1.0
    tol: float = 1e-10
    max_iter: int = 100

    def __post_init__(self):
        if not np.all(np.asarray(self.lower) < np.asarray(self.upper)):
            raise ValueError("lower bound must be below upper bound")
        if not self.eps_alpha > 0:
            raise ValueError("eps_alpha must be positive")
        if not self.lap_weight > 0:
            raise ValueError("lap_weight must be positive")


def riesz_matrix(grid: GridSpec, lap_weight: float = 1.0) -> sp.csc_matrix:
    """``I - w * Delta_N``."""
    L = neumann_laplacian(grid).matrix
    return (sp.identity(grid.size, format="csc") - lap_weight * L).tocsc()


def project_h1(a_tilde, grid: GridSpec, spec: ProjectionSpec, return_info: bool = False):
    """Approximate H^1 projection of ``a_tilde`` onto ``[lower, upper]``.

    Solves ``K (a - a_tilde) + ((a - upper)^+ - (lower - a)^+) / eps = 0``
    with ``K = I - w Delta_N`` by a primal active-set (semismooth Newton)
    iteration.
    """
    shape = np.shape(a_tilde)
    at = np.asarray(a_tilde, dtype=float).ravel()
    lo = np.broadcast_to(np.asarray(spec.lower, dtype=float), shape).ravel()
    hi = np.broadcast_to(np.asarray(spec.upper, dtype=float), shape).ravel()
    K = riesz_matrix(grid, spec.lap_weight)
    Kat = K @ at
    inv_eps = 1.0 / spec.eps_alpha

    def residual(a):
        return K @ (a - at) + inv_eps * (np.maximum(a - hi, 0.0) - np.maximum(lo - a, 0.0))

    a = at.copy()
    sets = (a > hi, a < lo)
    history = []
    rnorm = float(np.linalg.norm(residual(a)))
    for it in range(1, spec.max_iter + 1):
        up, dn = sets
        key = (up.tobytes(), dn.tobytes())
        if key in history[-4:]:
            raise ProjectionError("active-set cycling in H1 projection")
        history.append(key)
        chi = (up | dn).astype(float)
        J = (K + inv_eps * sp.diags(chi)).tocsc()
        rhs = Kat + inv_eps * (np.where(up, hi, 0.0) + np.where(dn, lo, 0.0))
        a = spla.spsolve(J, rhs)
        rnorm = float(np.linalg.norm(residual(a)))
        new_sets = (a > hi, a < lo)
        # Stable active sets mean the piecewise-linear system is solved exactly.
        stable = all(np.array_equal(x, y) for x, y in zip(sets, new_sets))
        sets = new_sets
        if stable or rnorm <= spec.tol * (1.0 + float(np.linalg.norm(Kat))):
            break
    else:
        raise ProjectionError(f"H1 projection did not converge, residual {rnorm:.3e}")
    out = a.reshape(shape)
    if return_info:
        return out, {"iterations": it, "residual": rnorm}
    return out


def clamp_scalar(a0, lower, upper):
    return np.maximum(np.minimum(a0, upper), lower)
