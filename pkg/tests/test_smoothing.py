import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tgv_bilevel import smoothing as sm

EPS = np.finfo(float).eps


def central(fun, x, h=1e-5):
    return (fun(x + h) - fun(x - h)) / (2 * h)


class TestHuber:
    def test_zero(self):
        assert sm.huber(np.zeros((2, 3, 3)), 0.1).max() == 0

    def test_continuity_at_gamma(self):
        g = 0.3
        lo = g * g / (2 * g)
        hi = g - 0.5 * g
        assert sm.huber_scalar(g, g) == pytest.approx(lo, abs=1e-16)
        assert lo == pytest.approx(hi, abs=1e-16)

    def test_direct_value(self):
        v = np.zeros((2, 1, 1))
        v[0, 0, 0] = 2.0
        assert sm.huber(v, 0.5)[0, 0] == pytest.approx(1.75)

    @pytest.mark.parametrize("gamma", [1e-1, 1e-2, 1e-3])
    def test_tends_to_norm(self, gamma, rng):
        r = np.abs(rng.standard_normal(500))
        assert np.abs(sm.huber_scalar(r, gamma) - r).max() <= gamma / 2 + 1e-15

    def test_frobenius_magnitude(self):
        p = np.array([1.0, 1.0, 1.0]).reshape(3, 1, 1)
        assert sm.pixel_magnitude(p, tensor=True)[0, 0] == pytest.approx(2.0)

    def test_rejects_nonpositive_gamma(self):
        with pytest.raises(ValueError):
            sm.HuberParam(0.0)


class TestGDelta:
    def test_inactive_branch(self):
        assert sm.g_delta(-1.0, 0.1) == 0
        assert sm.g_delta_prime(-1.0, 0.1) == 0
        assert sm.g_delta_second(-1.0, 0.1) == 0

    @pytest.mark.parametrize("delta", [1e-1, 1e-3, 2.0])
    def test_c2_junctions(self, delta):
        # Evaluate each branch formula on both sides of t = delta and t = 0.
        d = delta
        assert sm.g_delta(d, d) == pytest.approx(d ** 3 / (6 * d), rel=4 * EPS)
        assert sm.g_delta(d, d) == pytest.approx(d * d / 6, rel=4 * EPS)
        assert sm.g_delta_prime(d, d) == pytest.approx(d / 2, rel=4 * EPS)
        assert sm.g_delta_prime(np.nextafter(d, 0), d) == pytest.approx(d / 2, rel=1e-12)
        assert sm.g_delta_second(d, d) == 1
        assert sm.g_delta_second(np.nextafter(d, 0), d) == pytest.approx(1, rel=1e-12)
        for fn in (sm.g_delta, sm.g_delta_prime, sm.g_delta_second):
            assert fn(0.0, d) == 0 and fn(-1e-300, d) == 0

    def test_direct_value(self):
        # 1/2 - 0.05 + 0.01/6
        assert sm.g_delta(1.0, 0.1) == pytest.approx(0.4516666666666667, rel=1e-14)

    @pytest.mark.parametrize("t", [-0.3, 0.02, 0.07, 0.5, 3.0])
    def test_derivatives_match_fd(self, t):
        d = 0.1
        assert sm.g_delta_prime(t, d) == pytest.approx(central(lambda x: sm.g_delta(x, d), t), rel=1e-6, abs=1e-12)
        assert sm.g_delta_second(t, d) == pytest.approx(
            central(lambda x: sm.g_delta_prime(x, d), t), rel=1e-6, abs=1e-12)


class TestPenalties:
    def test_interior_is_zero(self, rng):
        q = rng.uniform(-0.4, 0.4, (2, 5, 5))
        p = rng.uniform(-0.4, 0.4, (3, 5, 5))
        assert sm.penalty_P(q, 0.5, 0.1) == 0
        assert sm.penalty_Q(p, 0.5, 0.1) == 0

    def test_single_violating_pixel(self):
        a1, d, h = 0.7, 1e-3, 0.25
        q = np.zeros((2, 4, 4))
        q[0, 1, 2] = a1 + 1.0
        assert sm.penalty_P(q, a1, d, h) == pytest.approx(h * h * (0.5 - d / 2 + d * d / 6), rel=1e-12)

    def test_even(self, rng):
        q = rng.standard_normal((2, 6, 6))
        assert sm.penalty_P(q, 0.3, 0.05) == pytest.approx(sm.penalty_P(-q, 0.3, 0.05), rel=1e-15)

    def test_gradients_match_fd(self, rng):
        d, a1, a0 = 0.05, 0.6, 0.4
        q = rng.standard_normal((2, 4, 4))
        p = rng.standard_normal((3, 4, 4))
        P, Q, dP, dQ = sm.penalty_gradients(q, p, a0, a1, d)
        for x, G, fun, a in ((q, P, sm.penalty_P, a1), (p, Q, sm.penalty_Q, a0)):
            for idx in [(0, 1, 1), (1, 2, 3), (0, 3, 0)]:
                e = np.zeros_like(x)
                e[idx] = 1.0
                fd = central(lambda s: fun(x + s * e, a, d), 0.0)
                assert G[idx] == pytest.approx(fd, rel=1e-6, abs=1e-10)
        # Bound derivative, pixelwise: perturb the bound at one pixel.
        a1f = np.full((4, 4), a1)
        e = np.zeros((4, 4))
        e[2, 1] = 1.0
        fd = central(lambda s: sm.penalty_P(q, a1f + s * e, d), 0.0)
        assert dP[2, 1] == pytest.approx(fd, rel=1e-6, abs=1e-10)
        fd = central(lambda s: sm.penalty_Q(p, np.full((4, 4), a0) + s * e, d), 0.0)
        assert dQ[2, 1] == pytest.approx(fd, rel=1e-6, abs=1e-10)

    def test_mixed_derivative_matches_fd(self, rng):
        x = rng.standard_normal(50)
        fd = central(lambda a: sm.box_derivative(x, a, 0.05), 0.4)
        np.testing.assert_allclose(sm.box_mixed_derivative(x, 0.4, 0.05), fd, rtol=1e-6, atol=1e-8)

    def test_gradient_is_odd(self, rng):
        q = rng.standard_normal((2, 5, 5))
        P1 = sm.box_derivative(q, 0.3, 0.05)
        P2 = sm.box_derivative(-q, 0.3, 0.05)
        np.testing.assert_array_equal(P1, -P2)

    def test_inside_margin_zero_fields(self, rng):
        q = rng.uniform(-0.2, 0.2, (2, 5, 5))
        P, _, dP, _ = sm.penalty_gradients(q, np.zeros((3, 5, 5)), 1.0, 0.3, 0.1)
        assert not P.any() and not dP.any()


class TestSmoothMax:
    def test_branches(self):
        g, d = 1.0, 0.2
        assert sm.smooth_max(0.5, g, d) == g and sm.smooth_max_deriv(0.5, g, d) == 0
        assert sm.smooth_max(g + d / 2, g, d) == pytest.approx(g + d / 2, rel=1e-15)
        assert sm.smooth_max_deriv(g + d / 2, g, d) == 1
        assert sm.smooth_max(g - d / 2, g, d) == pytest.approx(g, rel=1e-15)

    def test_direct_value(self):
        # (r + d/2 - g)^2 / (2 d) + g with g = r = 1, d = 0.2
        assert sm.smooth_max(1.0, 1.0, 0.2) == pytest.approx(1.025, rel=1e-14)
        assert sm.smooth_max_deriv(1.0, 1.0, 0.2) == pytest.approx(0.5, rel=1e-14)

    def test_parameter_error(self):
        with pytest.raises(ValueError):
            sm.smooth_max(1.0, 0.1, 0.3)

    @given(st.floats(0, 5), st.floats(0.05, 2), st.floats(0.01, 0.09))
    @settings(max_examples=200, deadline=None)
    def test_bounds(self, r, g, d):
        m = max(r, g)
        v = float(sm.smooth_max(r, g, d))
        assert m - d / 8 - 1e-15 <= v <= m + d / 8 + 1e-15

    @pytest.mark.parametrize("r", [0.3, 0.95, 1.03, 2.0])
    def test_derivative_fd(self, r):
        fd = central(lambda x: sm.smooth_max(x, 1.0, 0.2), r)
        assert sm.smooth_max_deriv(r, 1.0, 0.2) == pytest.approx(fd, rel=1e-6, abs=1e-12)


class TestProjection:
    def test_radial_value(self):
        q = np.zeros((2, 2, 2))
        q[:, 0, 0] = (3.0, 4.0)
        out, _ = sm.project_feasible(q, np.zeros((3, 2, 2)), 1.0, 1.0)
        np.testing.assert_allclose(out[:, 0, 0], (0.6, 0.8), rtol=1e-15)
        assert not out[:, 1:, :].any()

    def test_inside_unchanged_and_zero(self, rng):
        q = rng.uniform(-0.3, 0.3, (2, 4, 4))
        out_q, out_p = sm.project_feasible(q, np.zeros((3, 4, 4)), 1.0, 1.0)
        np.testing.assert_array_equal(out_q, q)
        assert not out_p.any()

    def test_idempotent_nonexpansive(self, rng):
        q = 3 * rng.standard_normal((2, 6, 6))
        p = 3 * rng.standard_normal((3, 6, 6))
        a1 = rng.uniform(0.5, 1.5, (6, 6))
        q1, p1 = sm.project_feasible(q, p, a1, 0.7)
        q2, p2 = sm.project_feasible(q1, p1, a1, 0.7)
        np.testing.assert_allclose(q2, q1, rtol=1e-14)
        np.testing.assert_allclose(p2, p1, rtol=1e-14)
        assert np.all(sm.pixel_magnitude(q1) <= a1 * (1 + 1e-14))
        assert np.all(sm.pixel_magnitude(p1, tensor=True) <= 0.7 * (1 + 1e-14))
        qb = 3 * rng.standard_normal((2, 6, 6))
        qb1, _ = sm.project_feasible(qb, p, a1, 0.7)
        assert np.all(sm.pixel_magnitude(qb1 - q1) <= sm.pixel_magnitude(qb - q) * (1 + 1e-12))

    def test_component_mode(self):
        q = np.full((2, 2, 2), 2.0)
        out, _ = sm.project_feasible(q, np.zeros((3, 2, 2)), 1.0, 1.0, mode="component")
        assert np.all(out == 1.0)
        with pytest.raises(ValueError):
            sm.project_feasible(q, q, 1, 1, mode="bogus")
