import numpy as np
import pytest
from scipy.ndimage import uniform_filter

from tgv_bilevel import upper
from tgv_bilevel.fields import GridSpec
from tgv_bilevel.projection import riesz_matrix


def test_corridor_printed_values():
    lo, hi = upper.sigma_corridor(0.01, 7)
    assert round(lo, 5) == 0.00798 and round(hi, 5) == 0.01202


def test_corridor_errors():
    with pytest.raises(ValueError):
        upper.sigma_corridor(-1.0, 7)
    with pytest.raises(ValueError):
        upper.sigma_corridor(0.01, 1)
    with pytest.raises(ValueError):
        upper.CorridorSpec(0.01, n_w=4)


def test_filter_matches_uniform_filter_inside(rng):
    g = rng.standard_normal((20, 17))
    spec = upper.CorridorSpec(0.01, 7)
    ref = uniform_filter(g, size=7, mode="constant")
    got = upper.apply_filter(g, spec)
    np.testing.assert_allclose(got[3:-3, 3:-3], ref[3:-3, 3:-3], rtol=1e-12, atol=1e-14)


def test_filter_renormalizes_at_boundary():
    spec = upper.CorridorSpec(0.01, 5)
    np.testing.assert_allclose(upper.apply_filter(np.ones((9, 9)), spec), 1.0, rtol=1e-14)
    z = upper.CorridorSpec(0.01, 5, boundary="zero")
    assert upper.apply_filter(np.ones((9, 9)), z)[0, 0] == pytest.approx(9 / 25)


@pytest.mark.parametrize("boundary", ["renormalize", "zero"])
def test_filter_adjoint(boundary, rng):
    spec = upper.CorridorSpec(0.01, 7, boundary=boundary)
    a = rng.standard_normal((12, 10))
    b = rng.standard_normal((12, 10))
    lhs = np.sum(upper.apply_filter(a, spec) * b)
    rhs = np.sum(a * upper.apply_filter_adjoint(b, spec))
    assert lhs == pytest.approx(rhs, rel=1e-13)


def test_objective_zero_in_corridor():
    spec = upper.CorridorSpec(0.01)
    v = np.full((5, 5), 0.01)
    assert upper.objective_F(v, spec, GridSpec(5, 5)) == 0
    v[2, 2] = spec.sigma2_hi + 0.1
    assert upper.objective_F(v, spec, GridSpec(5, 5)) == pytest.approx(0.5 * 0.01)


def test_residual_gradient_fd(rng):
    grid = GridSpec.dual(10, 10)
    spec = upper.CorridorSpec(0.01)
    f = rng.standard_normal((10, 10)) * 0.2
    u = f + rng.standard_normal((10, 10)) * 0.12
    g = upper.residual_objective_grad(u, f, spec, grid)
    for _ in range(5):
        d = rng.standard_normal((10, 10))
        e = 1e-6
        fd = (upper.residual_objective(u + e * d, f, spec, grid)
              - upper.residual_objective(u - e * d, f, spec, grid)) / (2 * e)
        assert np.sum(g * d) == pytest.approx(fd, rel=1e-6)


def test_upper_value_dual_equals_pd_path(rng):
    from tgv_bilevel import operators as ops
    grid = GridSpec.dual(8, 8)
    spec = upper.CorridorSpec(0.01)
    p = rng.standard_normal((3, 8, 8)) * 1e-4
    f = rng.standard_normal((8, 8))
    u = f - ops.apply(ops.second_divergence(grid), p, (8, 8))
    a1 = np.full((8, 8), 0.3)
    K = riesz_matrix(grid)
    lhs = upper.upper_value_dual(p, f, a1, 1e-3, spec, grid, K)
    rhs = upper.residual_objective(u, f, spec, grid) + upper.weight_penalty(a1, 1e-3, K, grid)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_weight_penalty_constant_field():
    grid = GridSpec(4, 4)
    K = riesz_matrix(grid, 5.0)
    # Constants are not seen by the Laplacian.
    assert upper.weight_penalty(np.full((4, 4), 2.0), 0.1, K, grid) == pytest.approx(0.5 * 0.1 * 4 * 16)
    assert upper.weight_penalty(np.ones((4, 4)), 0.0, K, grid) == 0
