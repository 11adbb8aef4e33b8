"""Grid specification, grid-function containers and discrete norms.

Grid functions are stored row-major as dense arrays of shape ``(n, m)``
(scalars), ``(2, n, m)`` (vector fields) or ``(3, n, m)`` (symmetric
tensor fields ``(p11, p12, p22)``).  Flattening always uses C order, so the
pixel ``(i, j)`` maps to the index ``i * m + j``.  The row index ``i`` is
the ``x`` direction of the difference operators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass(frozen=True)
class GridSpec:
    n: int
    m: int
    h: float = 1.0

    def __post_init__(self):
        if self.n < 2 or self.m < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.n}x{self.m}")
        if not self.h > 0:
            raise ValueError(f"mesh size must be positive, got {self.h}")

    @classmethod
    def dual(cls, n: int, m: int) -> "GridSpec":
        """Grid with ``h = 1/sqrt(nm)``, used by the predual formulation."""
        return cls(n, m, 1.0 / math.sqrt(n * m))

    @classmethod
    def primal_dual(cls, n: int, m: int) -> "GridSpec":
        return cls(n, m, 1.0)

    @classmethod
    def for_mode(cls, mode: str, n: int, m: int) -> "GridSpec":
        if mode == "dual":
            return cls.dual(n, m)
        if mode in ("pd", "primal-dual"):
            return cls.primal_dual(n, m)
        raise ValueError(f"unknown grid mode {mode!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.m)

    @property
    def size(self) -> int:
        return self.n * self.m


@dataclass(frozen=True)
class _Field:
    grid: GridSpec
    values: np.ndarray = field(repr=False)

    _ncomp = 0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        expected = self.grid.shape if self._ncomp == 0 else (self._ncomp, *self.grid.shape)
        if vals.shape != expected:
            raise ValueError(f"{type(self).__name__} expects shape {expected}, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"{type(self).__name__} values must be finite")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def flat(self) -> np.ndarray:
        return self.values.ravel()


class ScalarField(_Field):
    _ncomp = 0


class VectorField(_Field):
    _ncomp = 2

    @property
    def components(self) -> tuple[np.ndarray, np.ndarray]:
        return self.values[0], self.values[1]


@dataclass(frozen=True)
class SymTensorField(_Field):
    """Symmetric 2x2 tensor field stored as ``(p11, p12, p22)``.

    With ``scaled=True`` the middle slot holds ``2 * p12``.
    """

    scaled: bool = False
    _ncomp = 3

    def to_scaled(self) -> "SymTensorField":
        if self.scaled:
            return self
        return SymTensorField(self.grid, scale_tensor(self.values), scaled=True)

    def to_unscaled(self) -> "SymTensorField":
        if not self.scaled:
            return self
        return SymTensorField(self.grid, unscale_tensor(self.values), scaled=False)


TENSOR_WEIGHTS = np.array([1.0, 2.0, 1.0])


def scale_tensor(p: np.ndarray) -> np.ndarray:
    """``(p11, p12, p22) -> (p11, 2 p12, p22)``."""
    return np.asarray(p, dtype=float) * TENSOR_WEIGHTS.reshape((3,) + (1,) * (np.ndim(p) - 1))


def unscale_tensor(s: np.ndarray) -> np.ndarray:
    return np.asarray(s, dtype=float) / TENSOR_WEIGHTS.reshape((3,) + (1,) * (np.ndim(s) - 1))


def l2_norm(u, grid: GridSpec) -> float:
    """Discrete ``l2`` norm ``sqrt(h^2 sum |u_ij|^2)`` over all components."""
    u = np.asarray(u, dtype=float)
    return grid.h * float(np.sqrt(np.sum(u * u)))


def _riesz(lap: sp.spmatrix) -> sp.csc_matrix:
    return (sp.identity(lap.shape[0], format="csc") - lap).tocsc()


def h1_norm(a, lap, grid: GridSpec) -> float:
    """``h * sqrt(a^T (I - lap) a)`` for a Neumann Laplacian ``lap``."""
    a = np.asarray(a, dtype=float).ravel()
    val = float(a @ (_riesz(lap) @ a))
    return grid.h * math.sqrt(max(val, 0.0))


def h1_dual_norm(r, lap, grid: GridSpec) -> float:
    """``h * sqrt(r^T (I - lap)^{-1} r)`` via one sparse solve."""
    r = np.asarray(r, dtype=float).ravel()
    if not np.any(r):
        return 0.0
    z = spla.spsolve(_riesz(lap), r)
    if not np.all(np.isfinite(z)):
        raise np.linalg.LinAlgError("singular Riesz system")
    return grid.h * math.sqrt(max(float(r @ z), 0.0))


def h02_dual_norm(v, bilap, grid: GridSpec) -> float:
    """Diagnostic ``h * sqrt(v^T (I + bilap)^{-1} v)``; no algorithm uses it."""
    v = np.asarray(v, dtype=float).ravel()
    K = (sp.identity(bilap.shape[0], format="csc") + bilap).tocsc()
    z = spla.spsolve(K, v)
    return grid.h * math.sqrt(max(float(v @ z), 0.0))
