"""Projected gradient descent with Armijo backtracking over weight parameters.

Shared by both bilevel formulations.  The caller supplies

* ``evaluate(alphas, warm)`` returning an :class:`Evaluation` (objective at
  the lower-level solution for weights ``alphas``),
* ``derivatives(ev)`` returning, per parameter, the Euclidean derivative
  (pairs with increments to give directional derivatives) and the descent
  direction (Riesz representative),
* ``project(i, value)`` mapping a trial value back to the admissible set.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .exceptions import ConvergenceError
from .history import RunHistory

log = logging.getLogger(__name__)


@dataclass
class Evaluation:
    objective: float
    F: float
    reg: float
    state: Any = None
    lower_iterations: int = 0
    ok: bool = True
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ArmijoParams:
    c: float
    theta_minus: float
    theta_plus: float
    max_shrinks: int = 40

    def __post_init__(self):
        if not 0 < self.c < 1:
            raise ValueError("Armijo constant must lie in (0, 1)")
        if not (0 < self.theta_minus < 1 <= self.theta_plus):
            raise ValueError("need 0 < theta_minus < 1 <= theta_plus")


def _inner(d, step):
    return float(np.sum(np.asarray(d) * np.asarray(step)))


def projected_armijo(alphas: list, taus: list, evaluate: Callable, derivatives: Callable,
                     project: Callable, params: ArmijoParams, max_outer: int,
                     free: tuple | None = None, monitor: Callable | None = None,
                     history: RunHistory | None = None, proximity_tol: float = 0.0):
    """Run ``max_outer`` projected gradient iterations.

    Returns ``(alphas, last Evaluation, history)``.  Stops early when the
    line search exceeds ``max_shrinks`` consecutive reductions, or when
    ``proximity_tol > 0`` and the relative change of the weights in an
    accepted step falls below it.
    """
    history = RunHistory() if history is None else history
    free = tuple(range(len(alphas))) if free is None else free
    alphas = [a if np.ndim(a) == 0 else np.array(a, dtype=float) for a in alphas]
    taus = list(taus)
    cur = evaluate(alphas, None)
    history.lower_solves += 1
    if not cur.ok:
        raise ConvergenceError("lower-level solve failed at the initial weights")
    history.initial = dict(objective=cur.objective, F=cur.F, reg=cur.reg,
                           lower_iterations=cur.lower_iterations)
    if monitor is not None:
        history.initial.update(monitor(cur, alphas))
    for k in range(1, max_outer + 1):
        derivs = derivatives(cur, alphas)
        shrinks = 0
        accepted = False
        while shrinks <= params.max_shrinks:
            trial = list(alphas)
            for i in free:
                d, g = derivs[i]
                trial[i] = project(i, alphas[i] - taus[i] * g)
            dec = sum(_inner(derivs[i][0], trial[i] - alphas[i]) for i in free)
            ev = evaluate(trial, cur.state)
            history.lower_solves += 1
            if ev.ok and ev.objective <= cur.objective + params.c * dec and ev.objective <= cur.objective:
                accepted = True
                break
            for i in free:
                taus[i] *= params.theta_minus
            shrinks += 1
        if not accepted:
            log.warning("line search failed at outer iteration %d; stopping", k)
            break
        change = sum(float(np.sum((np.asarray(trial[i]) - alphas[i]) ** 2)) for i in free)
        size = sum(float(np.sum(np.asarray(alphas[i]) ** 2)) for i in free)
        alphas, cur = trial, ev
        row = dict(iteration=k, objective=cur.objective, F=cur.F, reg=cur.reg,
                   tau0=taus[0], tau1=taus[1], shrinks=shrinks,
                   lower_iterations=cur.lower_iterations)
        row.update(cur.extra)
        if monitor is not None:
            row.update(monitor(cur, alphas))
        history.append(**row)
        for i in free:
            taus[i] *= params.theta_plus
        if proximity_tol > 0 and change <= proximity_tol ** 2 * max(size, 1e-300):
            log.info("weights stationary at iteration %d", k)
            break
    return alphas, cur, history
