import numpy as np
import pytest

from tgv_bilevel.descent import ArmijoParams, Evaluation, projected_armijo
from tgv_bilevel.exceptions import ConvergenceError


def _quadratic(target):
    def evaluate(alphas, warm):
        J = sum(float(np.sum((np.asarray(a) - t) ** 2)) for a, t in zip(alphas, target))
        return Evaluation(J, J, 0.0, state=None, lower_iterations=1)

    def derivatives(ev, alphas):
        return [(2 * (np.asarray(a) - t), 2 * (np.asarray(a) - t)) for a, t in zip(alphas, target)]

    return evaluate, derivatives


def test_converges_on_box_constrained_quadratic():
    target = (2.0, np.array([[0.5, -1.0]]))
    ev, der = _quadratic(target)

    def project(i, v):
        return np.clip(v, 0.0, 1.0)

    alphas, cur, hist = projected_armijo([0.3, np.array([[0.2, 0.2]])], [10.0, 10.0], ev, der, project,
                                         ArmijoParams(1e-4, 0.5, 2.0), 30)
    assert alphas[0] == pytest.approx(1.0)
    np.testing.assert_allclose(alphas[1], [[0.5, 0.0]], atol=1e-8)
    obj = hist.objectives
    assert all(b <= a for a, b in zip(obj, obj[1:]))
    assert hist.initial["objective"] > obj[0]
    assert hist.lower_solves >= len(hist) + 1


def test_free_subset_and_shrink_counting():
    target = (1.0, 1.0)
    ev, der = _quadratic(target)
    alphas, _, hist = projected_armijo([0.0, 0.0], [100.0, 100.0], ev, der, lambda i, v: v,
                                       ArmijoParams(1e-4, 0.25, 2.0), 3, free=(1,))
    assert alphas[0] == 0.0
    assert hist.rows[0]["shrinks"] > 0


def test_line_search_cap_stops_loop():
    def evaluate(alphas, warm):
        return Evaluation(1.0 if alphas[0] == 0 else 2.0, 0, 0)

    def derivatives(ev, alphas):
        return [(-1.0, -1.0), (0.0, 0.0)]

    alphas, _, hist = projected_armijo([0.0, 0.0], [1.0, 1.0], evaluate, derivatives, lambda i, v: v,
                                       ArmijoParams(1e-4, 0.5, 2.0, max_shrinks=3), 5)
    assert alphas[0] == 0.0 and len(hist) == 0
    assert hist.lower_solves == 1 + 4


def test_initial_failure_raises():
    with pytest.raises(ConvergenceError):
        projected_armijo([1.0, 1.0], [1, 1], lambda a, w: Evaluation(np.inf, 0, 0, ok=False),
                         None, None, ArmijoParams(0.1, 0.5, 2.0), 1)


def test_params_validation():
    with pytest.raises(ValueError):
        ArmijoParams(1.5, 0.5, 2.0)
    with pytest.raises(ValueError):
        ArmijoParams(0.1, 1.5, 2.0)


def test_proximity_stop():
    ev, der = _quadratic((0.5, 0.5))
    _, _, full = projected_armijo([0.0, 0.0], [0.5, 0.5], ev, der, lambda i, v: v,
                                  ArmijoParams(1e-4, 0.5, 1.0), 20)
    _, _, short = projected_armijo([0.0, 0.0], [0.5, 0.5], ev, der, lambda i, v: v,
                                   ArmijoParams(1e-4, 0.5, 1.0), 20, proximity_tol=1e-6)
    assert len(full) == 20 and len(short) < 20
