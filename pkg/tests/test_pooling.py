import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from autopool.exceptions import InvalidInputError, InvalidParameterError
from autopool.pooling import (CAPPED, REGULARIZED, AlphaVector, PoolingOperator, cap_alpha_bound,
                              min_weight_alpha_bound, pool_auto, pool_auto_backward, pool_max,
                              pool_mean, pool_softmax, project_alpha, rap_penalty, weight_bounds)

# frozen from 50-digit mpmath evaluation of the closed forms
E_OVER_1PE = 0.73105857863000487925
ONE_OVER_1PE = 0.26894142136999512075
AUTO2_POOLED = 0.66111487009941058576
AUTO2_WEIGHTS = [0.23147521650098235707, 0.76852478349901764293]
AUTO2_DALPHA = 0.064041998632850052788
AUTO2_DP = [0.018001887724815514443, 0.98199811227518448556]
BOUNDS_A2_M3 = (0.063378938333037618189, 0.78698604216159849898)
LN26 = 3.2580965380214820455

col = lambda *v: np.array(v, dtype=float)[:, None]

columns = st.integers(1, 12).flatmap(
    lambda m: hnp.arrays(np.float64, (m, 1), elements=st.floats(0.0, 1.0)))


class TestPoolMax:
    def test_unique_maximizer(self):
        pooled, w = pool_max(col(0.1, 0.9, 0.4))
        assert pooled[0] == 0.9
        np.testing.assert_array_equal(w[:, 0], [0, 1, 0])

    def test_tie_is_seeded_random(self):
        picks = {int(np.argmax(pool_max(col(0.5, 0.5), np.random.default_rng(s))[1][:, 0]))
                 for s in range(20)}
        assert picks == {0, 1}
        a = pool_max(col(0.5, 0.5), np.random.default_rng(3))[1]
        b = pool_max(col(0.5, 0.5), np.random.default_rng(3))[1]
        np.testing.assert_array_equal(a, b)
        assert a.sum() == 1.0 and a.max() == 1.0

    def test_singleton(self):
        pooled, w = pool_max(col(0.0))
        assert pooled[0] == 0.0 and w[0, 0] == 1.0

    def test_rng_untouched_without_ties(self):
        rng = np.random.default_rng(1)
        before = rng.bit_generator.state
        pool_max(col(0.1, 0.3))
        pool_max(col(0.1, 0.3), rng)
        assert rng.bit_generator.state == before


class TestPoolMean:
    @pytest.mark.parametrize("values, expected", [
        ((0.2, 0.8), 0.5), ((1, 1, 1, 1), 1.0), ((0.1, 0.2, 0.3), 0.2)])
    def test_examples(self, values, expected):
        pooled, w = pool_mean(col(*values))
        assert pooled[0] == pytest.approx(expected, abs=1e-15)
        np.testing.assert_array_equal(w, 1.0 / len(values))


class TestPoolSoftmax:
    def test_zero_one_column(self):
        pooled, w = pool_softmax(col(0.0, 1.0))
        np.testing.assert_allclose(w[:, 0], [ONE_OVER_1PE, E_OVER_1PE], rtol=1e-14)
        assert pooled[0] == pytest.approx(E_OVER_1PE, rel=1e-14)

    @given(c=st.floats(0, 1), m=st.integers(1, 30))
    def test_constant_column(self, c, m):
        assert pool_softmax(np.full((m, 1), c))[0][0] == pytest.approx(c, abs=1e-15)

    @given(p=columns)
    def test_weights_within_bound_interval(self, p):
        m = p.shape[0]
        lo, hi = 1 / (1 + math.e * (m - 1)), math.e / (math.e + m - 1)
        w = pool_softmax(p)[1]
        assert np.all(w >= lo - 1e-12) and np.all(w <= hi + 1e-12)


class TestPoolAuto:
    def test_alpha_zero_is_mean(self, backend):
        assert pool_auto(col(0.2, 0.8), [0.0])[0][0] == 0.5

    def test_alpha_two(self, backend):
        pooled, w = pool_auto(col(0.2, 0.8), [2.0])
        np.testing.assert_allclose(w[:, 0], AUTO2_WEIGHTS, rtol=1e-13)
        assert pooled[0] == pytest.approx(AUTO2_POOLED, rel=1e-13)

    def test_large_alpha_limits(self, backend):
        assert abs(pool_auto(col(0.2, 0.8), [100.0])[0][0] - 0.8) <= 1e-3
        assert abs(pool_auto(col(0.2, 0.8), [-100.0])[0][0] - 0.2) <= 1e-3
        np.testing.assert_allclose(pool_auto(col(0.2, 0.8), [100.0])[0], pool_max(col(0.2, 0.8))[0],
                                   atol=1e-3)

    @pytest.mark.parametrize("alpha", [500.0, -500.0, 1e4])
    def test_stable_for_extreme_alpha(self, backend, rng, alpha):
        p = rng.uniform(size=(27, 3))
        pooled, w = pool_auto(p, np.full(3, alpha))
        assert np.all(np.isfinite(pooled)) and np.all(np.isfinite(w))
        np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_alpha_rejected(self, bad):
        with pytest.raises(InvalidParameterError):
            pool_auto(col(0.2, 0.8), [bad])

    def test_alpha_length_checked(self):
        with pytest.raises(InvalidParameterError):
            pool_auto(np.full((3, 2), 0.5), [1.0, 2.0, 3.0])

    def test_per_class_alpha(self, backend):
        p = np.array([[0.2, 0.2], [0.8, 0.8]])
        pooled, _ = pool_auto(p, [0.0, 2.0])
        assert pooled[0] == 0.5
        assert pooled[1] == pytest.approx(AUTO2_POOLED, rel=1e-13)

    def test_batch_matches_single(self, backend, rng):
        p = rng.uniform(size=(4, 6, 3))
        a = rng.uniform(-3, 3, size=3)
        pooled, w = pool_auto(p, a)
        for b in range(4):
            pb, wb = pool_auto(p[b], a)
            np.testing.assert_allclose(pooled[b], pb, rtol=1e-15)
            np.testing.assert_allclose(w[b], wb, rtol=1e-15)

    @pytest.mark.parametrize("bad", [np.array([[1.5]]), np.array([[-0.1]]), np.array([[np.nan]]),
                                     np.zeros((0, 2)), np.zeros((3, 0))])
    def test_invalid_likelihoods(self, bad):
        with pytest.raises(InvalidInputError):
            pool_auto(bad, np.zeros(bad.shape[1] if bad.ndim == 2 else 1))


class TestBackward:
    def test_alpha_two(self, backend):
        g = pool_auto_backward(col(0.2, 0.8), [2.0], [1.0])
        assert g.d_alpha[0] == pytest.approx(AUTO2_DALPHA, rel=1e-12)
        np.testing.assert_allclose(g.d_instances[:, 0], AUTO2_DP, rtol=1e-12)

    def test_alpha_two_against_central_difference(self, backend):
        h = 1e-5
        f = lambda a: pool_auto(col(0.2, 0.8), [a])[0][0]
        fd = (f(2 + h) - f(2 - h)) / (2 * h)
        assert pool_auto_backward(col(0.2, 0.8), [2.0], [1.0]).d_alpha[0] == pytest.approx(fd, rel=1e-8)

    @given(p=columns)
    def test_alpha_zero_gradient_is_uniform(self, p):
        g = pool_auto_backward(p, [0.0], [1.0])
        np.testing.assert_array_equal(g.d_instances, 1.0 / p.shape[0])

    @given(c=st.floats(0, 1), m=st.integers(1, 20), a=st.floats(-50, 50))
    def test_constant_column_has_zero_alpha_gradient(self, c, m, a):
        assert abs(pool_auto_backward(np.full((m, 1), c), [a], [1.0]).d_alpha[0]) <= 1e-28

    def test_upstream_scales(self, backend, rng):
        p = rng.uniform(size=(5, 2))
        a = np.array([1.5, -0.5])
        g1 = pool_auto_backward(p, a, [1.0, 1.0])
        g2 = pool_auto_backward(p, a, [2.0, -3.0])
        np.testing.assert_allclose(g2.d_instances, g1.d_instances * [2.0, -3.0], rtol=1e-14)
        np.testing.assert_allclose(g2.d_alpha, g1.d_alpha * [2.0, -3.0], rtol=1e-14)

    @settings(max_examples=200)
    @given(p=columns, a=st.floats(-20, 20))
    def test_alpha_gradient_nonnegative(self, p, a):
        assert pool_auto_backward(p, [a], [1.0]).d_alpha[0] >= 0.0


class TestWeightBounds:
    def test_alpha_one_m_two(self):
        b = weight_bounds(1.0, 2)
        assert b.lower == pytest.approx(ONE_OVER_1PE, rel=1e-14)
        assert b.upper == pytest.approx(E_OVER_1PE, rel=1e-14)

    @pytest.mark.parametrize("m", [1, 2, 3, 27, 1000])
    def test_alpha_zero(self, m):
        assert weight_bounds(0.0, m) == (weight_bounds(0.0, m).__class__(1.0 / m, 1.0 / m))

    def test_alpha_two_m_three(self):
        b = weight_bounds(2.0, 3)
        assert (b.lower, b.upper) == pytest.approx(BOUNDS_A2_M3, rel=1e-14)

    def test_negative_alpha_matches_closed_form(self):
        a, m = -1.7, 9
        b = weight_bounds(a, m)
        assert b.lower == pytest.approx(math.exp(a) / (math.exp(a) + m - 1), rel=1e-14)
        assert b.upper == pytest.approx(1 / (1 + math.exp(a) * (m - 1)), rel=1e-14)

    def test_singleton(self):
        assert weight_bounds(3.0, 1) == weight_bounds(-3.0, 1) == weight_bounds(0.0, 1)
        assert weight_bounds(3.0, 1).lower == 1.0

    @given(a=st.floats(-700, 700), m=st.integers(2, 10_000))
    def test_ordering(self, a, m):
        b = weight_bounds(a, m)
        assert 0 <= b.lower <= 1.0 / m * (1 + 1e-12)
        assert 1.0 / m * (1 - 1e-12) <= b.upper <= 1.0


class TestCap:
    def test_half_m27(self):
        assert cap_alpha_bound(0.5, 27) == pytest.approx(LN26, rel=1e-15)

    @pytest.mark.parametrize("m", [2, 5, 27, 100])
    def test_uniform_phi_forces_mean(self, m):
        assert cap_alpha_bound(1.0 / m, m) == pytest.approx(0.0, abs=1e-12)
        assert min_weight_alpha_bound(1.0 / m, m) == pytest.approx(0.0, abs=1e-12)

    def test_half_m2(self):
        assert cap_alpha_bound(0.5, 2) == 0.0

    @pytest.mark.parametrize("phi, m", [(0.01, 27), (1.0, 27), (1.2, 5), (0.5, 1)])
    def test_invalid(self, phi, m):
        with pytest.raises(InvalidParameterError):
            cap_alpha_bound(phi, m)

    @given(phi=st.floats(0.05, 0.99), m=st.integers(2, 200))
    def test_bound_is_tight(self, phi, m):
        if phi < 1.0 / m:
            return
        a = cap_alpha_bound(phi, m)
        assert weight_bounds(a, m).upper == pytest.approx(phi, rel=1e-9)

    def test_min_weight_bound(self):
        a = min_weight_alpha_bound(0.01, 27)
        assert a < 0
        assert weight_bounds(a, 27).lower == pytest.approx(0.01, rel=1e-12)
        with pytest.raises(InvalidParameterError):
            min_weight_alpha_bound(0.5, 27)


class TestProjectAndPenalty:
    def test_clamp(self):
        a = AlphaVector([4.0, 1.0], CAPPED, upper=LN26)
        np.testing.assert_array_equal(project_alpha(a).alpha, [LN26, 1.0])

    @given(hnp.arrays(np.float64, 4, elements=st.floats(-10, 10)), st.floats(0, 10))
    def test_idempotent(self, values, upper):
        a = AlphaVector(values, CAPPED, upper=upper)
        once = project_alpha(a)
        np.testing.assert_array_equal(project_alpha(once).alpha, once.alpha)
        assert np.all(once.alpha <= upper)

    def test_interior_unchanged(self):
        np.testing.assert_array_equal(project_alpha(AlphaVector([0.0, 0.0], CAPPED, upper=2.0)).alpha, 0)

    def test_requires_cap(self):
        with pytest.raises(InvalidParameterError):
            project_alpha(AlphaVector([1.0]))

    def test_penalty_example(self):
        value, grad = rap_penalty(AlphaVector([2.0, -1.0], REGULARIZED, lam=1e-3))
        assert value == pytest.approx(0.005, rel=1e-14)
        np.testing.assert_allclose(grad, [0.004, -0.002], rtol=1e-14)

    def test_penalty_zero_cases(self):
        assert rap_penalty(AlphaVector([3.0, 4.0], REGULARIZED, lam=0.0))[0] == 0.0
        v, g = rap_penalty(AlphaVector([0.0, 0.0], REGULARIZED, lam=5.0))
        assert v == 0.0 and not g.any()

    def test_negative_lambda_rejected(self):
        with pytest.raises(InvalidParameterError):
            AlphaVector([1.0], REGULARIZED, lam=-1.0)


class TestOperatorParsing:
    @pytest.mark.parametrize("text, kind, lam", [
        ("auto", "auto", 0.0), ("CAP", "cap", 0.0), ("rap:1e-3", "rap", 1e-3), ("strong", "strong", 0.0)])
    def test_parse(self, text, kind, lam):
        op = PoolingOperator.parse(text)
        assert op.kind == kind and op.lam == lam

    def test_round_trip(self):
        assert str(PoolingOperator.parse("rap:0.001")) == "rap:0.001"

    @pytest.mark.parametrize("text", ["rap", "rap:x", "median", "auto:3"])
    def test_bad(self, text):
        with pytest.raises(InvalidParameterError):
            PoolingOperator.parse(text)


bags = st.tuples(st.integers(1, 15), st.integers(1, 4)).flatmap(
    lambda s: hnp.arrays(np.float64, s, elements=st.floats(0.0, 1.0)))
alphas = st.floats(-50, 50)


class TestInvariants:
    @settings(max_examples=200)
    @given(p=bags, a=alphas)
    def test_weights_normalized_and_pooled_in_range(self, p, a):
        pooled, w = pool_auto(p, np.full(p.shape[1], a))
        np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)
        assert np.all(w >= 0)
        assert np.all(pooled >= p.min(axis=0) - 1e-12)
        assert np.all(pooled <= p.max(axis=0) + 1e-12)

    @given(p=bags)
    def test_alpha_zero_bitwise_mean(self, p):
        np.testing.assert_array_equal(pool_auto(p, np.zeros(p.shape[1]))[0], pool_mean(p)[0])

    @given(p=bags)
    def test_alpha_one_is_softmax(self, p):
        np.testing.assert_allclose(pool_auto(p, np.ones(p.shape[1]))[0], pool_softmax(p)[0],
                                   rtol=0, atol=1e-12)

    @given(p=bags)
    def test_large_alpha_reaches_extremes(self, p):
        # the gap to the extreme is at most (m - 1) / (e * |alpha|)
        c = p.shape[1]
        np.testing.assert_allclose(pool_auto(p, np.full(c, 1e4))[0], p.max(axis=0), atol=1e-3)
        np.testing.assert_allclose(pool_auto(p, np.full(c, -1e4))[0], p.min(axis=0), atol=1e-3)

    @settings(max_examples=200)
    @given(p=bags, a=alphas, b=alphas)
    def test_monotone_in_alpha(self, p, a, b):
        lo, hi = min(a, b), max(a, b)
        c = p.shape[1]
        assert np.all(pool_auto(p, np.full(c, lo))[0] <= pool_auto(p, np.full(c, hi))[0] + 1e-12)

    @settings(max_examples=200)
    @given(p=bags, a=st.floats(-30, 30))
    def test_weights_within_bounds(self, p, a):
        b = weight_bounds(a, p.shape[0])
        w = pool_auto(p, np.full(p.shape[1], a))[1]
        assert np.all(w >= b.lower * (1 - 1e-12) - 1e-300)
        assert np.all(w <= b.upper * (1 + 1e-12))

    @given(m=st.integers(2, 50), a=st.floats(-20, 20))
    def test_bounds_attained_on_binary_bags(self, m, a):
        b = weight_bounds(a, m)
        lone_high = np.zeros((m, 1))
        lone_high[0, 0] = 1.0
        lone_low = 1.0 - lone_high
        w_high = pool_auto(lone_high, [a])[1][0, 0]
        w_low = pool_auto(lone_low, [a])[1][0, 0]
        if a >= 0:
            assert abs(w_high - b.upper) <= 1e-9 and abs(w_low - b.lower) <= 1e-9
        else:
            assert abs(w_high - b.lower) <= 1e-9 and abs(w_low - b.upper) <= 1e-9

    @given(p=bags, a=st.sampled_from([500.0, -500.0]))
    def test_extreme_alpha_finite(self, p, a):
        pooled, w = pool_auto(p, np.full(p.shape[1], a))
        g = pool_auto_backward(p, np.full(p.shape[1], a), np.ones(p.shape[1]))
        assert np.all(np.isfinite(pooled)) and np.all(np.isfinite(w))
        assert np.all(np.isfinite(g.d_instances)) and np.all(np.isfinite(g.d_alpha))

    @given(c=st.integers(1, 5), a=alphas, data=st.data())
    def test_singleton_bag_identity(self, c, a, data):
        p = data.draw(hnp.arrays(np.float64, (1, c), elements=st.floats(0, 1)))
        for fn in (pool_mean, pool_softmax, pool_max):
            np.testing.assert_array_equal(fn(p)[0], p[0])
        pooled, w = pool_auto(p, np.full(c, a))
        np.testing.assert_array_equal(pooled, p[0])
        np.testing.assert_array_equal(w, 1.0)

    @given(p=bags, a=alphas, perm_seed=st.integers(0, 2**32 - 1))
    def test_permutation_invariant(self, p, a, perm_seed):
        perm = np.random.default_rng(perm_seed).permutation(p.shape[0])
        alpha = np.full(p.shape[1], a)
        np.testing.assert_allclose(pool_auto(p[perm], alpha)[0], pool_auto(p, alpha)[0],
                                   rtol=1e-12, atol=1e-15)
