"""Scalar weight sweeps scored by PSNR, SSIM and the corridor objective."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import lower_dual as ld
from . import lower_pd as lp
from . import upper
from .exceptions import ConvergenceError, SolverError
from .fields import GridSpec
from .metrics import psnr, ssim

log = logging.getLogger(__name__)

HEADER = ("alpha0", "alpha1", "psnr", "ssim", "F", "ok")


@dataclass
class GridTable:
    rows: list[tuple]

    def _best(self, col, sign):
        ok = [r for r in self.rows if r[5]]
        if not ok:
            raise ValueError("no successful rows")
        return max(ok, key=lambda r: sign * r[col])

    @property
    def best_psnr(self):
        return self._best(2, 1)

    @property
    def best_ssim(self):
        return self._best(3, 1)

    @property
    def best_F(self):
        return self._best(4, -1)


def solve_scalar(f, alpha0, alpha1, solver: str, cfg=None) -> np.ndarray:
    """Reconstruction for scalar weights with either lower-level solver."""
    f = np.asarray(f, dtype=float)
    if solver == "pd":
        return lp.pd_newton_solve(f, alpha0, alpha1, cfg or lp.PDSolverConfig()).u
    if solver == "dual":
        grid = GridSpec.dual(*f.shape)
        return ld.solve_lower_dual(f, alpha0, alpha1, cfg or ld.DualSolverConfig(), grid).u
    raise ValueError(f"unknown solver {solver!r}")


def _row(args):
    f, u_true, a0, a1, solver, cfg, spec = args
    grid = GridSpec.primal_dual(*f.shape) if solver == "pd" else GridSpec.dual(*f.shape)
    try:
        u = solve_scalar(f, a0, a1, solver, cfg)
    except (ConvergenceError, SolverError) as exc:
        log.warning("grid point (%g, %g) failed: %s", a0, a1, exc)
        return (a0, a1, float("nan"), float("nan"), float("nan"), False)
    F = upper.residual_objective(u, f, spec, grid)
    return (a0, a1, psnr(u, u_true), ssim(u, u_true), F, True)


def gridsearch(f, u_true, alpha0_list, alpha1_list, solver: str = "pd", cfg=None,
               spec: upper.CorridorSpec | None = None, workers: int = 1) -> GridTable:
    """Solve every ``(alpha0, alpha1)`` pair; failed rows are flagged."""
    if len(alpha0_list) == 0 or len(alpha1_list) == 0:
        raise ValueError("weight lists must be nonempty")
    spec = spec or upper.CorridorSpec(0.01)
    f = np.asarray(f, dtype=float)
    jobs = [(f, u_true, float(a0), float(a1), solver, cfg, spec)
            for a0 in alpha0_list for a1 in alpha1_list]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_row, jobs))
    else:
        rows = [_row(j) for j in jobs]
    return GridTable(rows)
