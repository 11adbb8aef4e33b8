import numpy as np
import pytest

from tgv_bilevel import lower_dual as ld
from tgv_bilevel.exceptions import ConvergenceError
from tgv_bilevel.fields import GridSpec
from tgv_bilevel.metrics import add_gaussian_noise, make_phantom

W = np.array([1.0, 2.0, 1.0])[:, None, None]


def _instance(rng, n=8):
    grid = GridSpec.dual(n, n)
    f = rng.standard_normal((n, n))
    p = rng.standard_normal((3, n, n)) * 2e-3
    a1 = rng.uniform(0.5, 1.5, (n, n)) * 0.02
    return grid, f, p, 1e-3, a1


@pytest.mark.parametrize("eps", [None, (1e-2, 1e-1), (1.0, 1.0)])
def test_residual_is_energy_gradient(eps, rng):
    cfg = ld.DualSolverConfig(gamma=1e-2, delta=1e-3)
    grid, f, p, a0, a1 = _instance(rng)
    eps = eps or (1e-1, 1e-1)
    g = ld.dual_residual(p, f, a0, a1, cfg, grid, eps)
    for _ in range(4):
        d = rng.standard_normal(p.shape) * 1e-3
        t = 1e-5
        fd = (ld.dual_energy(p + t * d, f, a0, a1, cfg, grid, eps)
              - ld.dual_energy(p - t * d, f, a0, a1, cfg, grid, eps)) / (2 * t)
        pred = grid.h ** 2 * np.sum(W * g * d)
        assert pred == pytest.approx(fd, rel=1e-6)


def test_newton_matrix_is_residual_jacobian(rng):
    cfg = ld.DualSolverConfig(delta=1e-2)
    grid, f, p, a0, a1 = _instance(rng, 6)
    eps = (1e-1, 1e-1)
    H = ld.newton_matrix(p, a0, a1, cfg, grid, eps)
    assert abs(H - H.T).max() <= 1e-10 * abs(H).max()
    d = rng.standard_normal(p.shape) * 1e-4
    t = 1e-6
    fd = (ld.dual_residual(p + t * d, f, a0, a1, cfg, grid, eps)
          - ld.dual_residual(p - t * d, f, a0, a1, cfg, grid, eps)) / (2 * t)
    pred = (H @ (W * d).ravel()).reshape(p.shape)
    np.testing.assert_allclose(pred, fd, rtol=1e-5, atol=1e-6 * np.abs(fd).max())


def test_newton_step_solves_linear_system(rng):
    cfg = ld.DualSolverConfig()
    grid, f, p, a0, a1 = _instance(rng, 6)
    dp = ld.dual_newton_step(p, f, a0, a1, cfg, grid, (1.0, 1.0))
    H = ld.newton_matrix(p, a0, a1, cfg, grid, (1.0, 1.0))
    g = ld.dual_residual(p, f, a0, a1, cfg, grid, (1.0, 1.0))
    np.testing.assert_allclose(H @ (W * dp).ravel(), -g.ravel(), rtol=1e-8, atol=1e-8 * np.abs(g).max())


def test_eps_schedule():
    cfg = ld.DualSolverConfig()
    sched = cfg.eps_schedule()
    assert sched[0] == (1e3, 1e3) and sched[-1] == (1e-12, 1e-12)
    assert all(b[0] < a[0] for a, b in zip(sched, sched[1:]))
    with pytest.raises(ValueError):
        ld.DualSolverConfig(theta_eps=1.5)


def test_cg_matches_direct(rng):
    grid, f, p, a0, a1 = _instance(rng, 6)
    d1 = ld.dual_newton_step(p, f, a0, a1, ld.DualSolverConfig(), grid, (1.0, 1.0))
    d2 = ld.dual_newton_step(p, f, a0, a1, ld.DualSolverConfig(linear_solver="cg"), grid, (1.0, 1.0))
    np.testing.assert_allclose(d2, d1, rtol=1e-6, atol=1e-8 * np.abs(d1).max())


def test_solve_converges_and_is_nearly_feasible():
    n = 16
    grid = GridSpec.dual(n, n)
    f = add_gaussian_noise(make_phantom("piecewise-constant", n), 0.01, 3)
    a0, a1 = 0.2 * grid.h ** 2, 0.25 * grid.h
    res = ld.solve_lower_dual(f, a0, a1, ld.DualSolverConfig(), grid)
    assert res.converged
    assert len(res.stage_iterations) == len(ld.DualSolverConfig().eps_schedule())
    assert ld.box_violation(res.p, a0, a1, grid) < 1e-3 * a1
    np.testing.assert_allclose(res.u, ld.recover_image(res.p, f, grid))


def test_matches_exact_box_predual():
    cp = pytest.importorskip("cvxpy")
    from tgv_bilevel import operators as ops
    n = 12
    grid = GridSpec.dual(n, n)
    f = add_gaussian_noise(make_phantom("piecewise-affine", n), 0.01, 1)
    a0, a1 = 0.2 * grid.h ** 2, 0.25 * grid.h
    res = ld.solve_lower_dual(f, a0, a1, ld.DualSolverConfig(), grid)
    D2 = ops.second_divergence(grid).matrix.toarray()
    Dv = ops.divergence(grid).matrix.toarray()
    p = cp.Variable(3 * n * n)
    prob = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(f.ravel() - D2 @ p)),
                      [cp.abs(p) <= a0, cp.abs(Dv @ p) <= a1])
    prob.solve(solver="CLARABEL")
    uc = f.ravel() - D2 @ p.value
    assert np.linalg.norm(res.u.ravel() - uc) / np.linalg.norm(uc) < 2e-2


def test_failure_raises_with_history():
    n = 8
    grid = GridSpec.dual(n, n)
    f = make_phantom("piecewise-constant", n)
    cfg = ld.DualSolverConfig(max_newton=1)
    with pytest.raises(ConvergenceError) as exc:
        ld.solve_lower_dual(f, 1e-3, 1e-2, cfg, grid)
    assert exc.value.history
    res = ld.solve_lower_dual(f, 1e-3, 1e-2, cfg, grid, raise_on_failure=False)
    assert not res.converged


def test_resolution_scaling():
    g = GridSpec.dual(64, 64)
    a0, a1 = ld.resolution_scaled_weights(0.2, 0.25, g)
    assert a0 == pytest.approx(0.2 / 64 ** 2) and a1 == pytest.approx(0.25 / 64)
