from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from convomeasure.discrete import (
    DiscreteLaw,
    LawError,
    WeightFunction,
    convolution_interaction,
    convolution_power,
    discrete_convolution,
    mean_one_check,
    partial_sum_clt_distance,
    pointwise_interaction,
)

half = Fraction(1, 2)


def enumerate_convolution(f, g):
    """Oracle: accumulate f(a) g(b) over every pair (a, b)."""
    out = {}
    for a, x in enumerate(f):
        for b, y in enumerate(g):
            out[a + b] = out.get(a + b, 0) + x * y
    return [out[k] for k in range(len(f) + len(g) - 1)]


def random_exact_law(rng, size):
    w = [int(v) for v in rng.integers(0, 20, size)]
    if sum(w) == 0:
        w[0] = 1
    total = sum(w)
    return DiscreteLaw(tuple(Fraction(v, total) for v in w))


@st.composite
def exact_laws(draw, max_support=32):
    size = draw(st.integers(1, max_support + 1))
    w = draw(st.lists(st.integers(0, 50), min_size=size, max_size=size))
    if sum(w) == 0:
        w[0] = 1
    return DiscreteLaw(tuple(Fraction(v, sum(w)) for v in w))


@st.composite
def float_laws(draw, max_support=32):
    size = draw(st.integers(1, max_support + 1))
    w = np.array(draw(st.lists(st.floats(0, 1), min_size=size, max_size=size)))
    if w.sum() == 0:
        w[0] = 1.0
    return DiscreteLaw(tuple(w / w.sum()))


class TestTypes:
    def test_law_rejects_bad_sum(self):
        with pytest.raises(LawError, match="sum"):
            DiscreteLaw((0.5, 0.6))
        with pytest.raises(LawError, match="exactly"):
            DiscreteLaw((half, Fraction(1, 3)))

    def test_law_rejects_out_of_range(self):
        with pytest.raises(LawError, match="k=0"):
            DiscreteLaw((1.5, -0.5))

    def test_weight_rejects_negative(self):
        with pytest.raises(LawError, match="k=0"):
            WeightFunction((-1.0, 2.0))

    def test_weight_rejects_inf(self):
        with pytest.raises(LawError):
            WeightFunction((float("inf"),))


class TestPointwise:
    def test_unit_interaction(self):
        p = DiscreteLaw.uniform(1)
        assert pointwise_interaction(p, WeightFunction((1.0, 1.0))).probs == p.probs

    def test_reweighting(self):
        out = pointwise_interaction(DiscreteLaw.uniform(1), WeightFunction((0.5, 1.5)))
        assert out.probs == (0.25, 0.75)

    def test_reweighting_exact(self):
        out = pointwise_interaction(DiscreteLaw((half, half)), WeightFunction((half, Fraction(3, 2))))
        assert out.probs == (Fraction(1, 4), Fraction(3, 4))

    def test_rejects_bad_normalization(self):
        with pytest.raises(LawError, match="1.5"):
            pointwise_interaction(DiscreteLaw((0.5, 0.5)), WeightFunction((2.0, 1.0)))

    def test_rejects_entry_above_one(self):
        # sums to 1 but the k=0 entry is 1.2
        with pytest.raises(LawError, match="k=0"):
            pointwise_interaction(DiscreteLaw((0.6, 0.4)), WeightFunction((2.0, 0.0)))

    def test_incompatible_support(self):
        with pytest.raises(LawError, match="incompatible"):
            pointwise_interaction(DiscreteLaw((1.0,)), WeightFunction((1.0, 1.0)))

    @pytest.mark.parametrize("free, weights, want", [
        ((0.5, 0.5), (1.0, 1.0), 1.0),
        ((0.5, 0.5), (0.5, 1.5), 1.0),
        ((1.0,), (0.7,), 0.7),
    ])
    def test_mean_one_check(self, free, weights, want):
        assert mean_one_check(DiscreteLaw(free), WeightFunction(weights)) == pytest.approx(want, abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(float_laws(), st.floats(1e-8, 1e-3))
    def test_accepts_iff_mean_one(self, p_free, eps):
        ones = WeightFunction((1.0,) * (p_free.support_max + 1))
        out = pointwise_interaction(p_free, ones)
        assert all(0 <= v <= 1 for v in out.probs)
        scaled = WeightFunction((1.0 - eps,) * (p_free.support_max + 1))
        with pytest.raises(LawError, match="sums to"):
            pointwise_interaction(p_free, scaled)


class TestConvolution:
    def test_bernoulli_pair(self):
        b = DiscreteLaw((half, half))
        assert discrete_convolution(b, b).probs == (Fraction(1, 4), half, Fraction(1, 4))

    def test_identity(self):
        p = DiscreteLaw((0.2, 0.3, 0.5))
        assert discrete_convolution(DiscreteLaw.delta(0), p).probs == p.probs

    def test_hand_example(self):
        out = discrete_convolution(DiscreteLaw((0.3, 0.7)), DiscreteLaw((0.6, 0.4)))
        np.testing.assert_allclose(out.probs, (0.18, 0.54, 0.28), atol=1e-15)
        assert sum(out.probs) == pytest.approx(1.0, abs=1e-15)

    def test_weight_inputs_stay_weights(self):
        out = discrete_convolution(WeightFunction((2.0, 1.0)), WeightFunction((1.0, 1.0)))
        assert isinstance(out, WeightFunction)
        assert out.weights == (2.0, 3.0, 1.0)

    def test_support_grows(self):
        out = discrete_convolution(DiscreteLaw.uniform(3), DiscreteLaw.uniform(5))
        assert out.support_max == 8

    @settings(max_examples=150, deadline=None)
    @given(exact_laws(), exact_laws())
    def test_exact_mode_normalized_and_matches_enumeration(self, f, g):
        out = discrete_convolution(f, g)
        assert sum(out.probs) == 1
        assert list(out.probs) == enumerate_convolution(f.probs, g.probs)

    @settings(max_examples=150, deadline=None)
    @given(float_laws(), float_laws())
    def test_double_mode_normalized(self, f, g):
        out = discrete_convolution(f, g)
        assert abs(sum(out.probs) - 1.0) <= 1e-12
        np.testing.assert_allclose(out.probs, enumerate_convolution(f.probs, g.probs), atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(float_laws(12), float_laws(12), float_laws(12))
    def test_commutative_associative(self, f, g, h):
        np.testing.assert_allclose(discrete_convolution(f, g).probs, discrete_convolution(g, f).probs,
                                   atol=1e-12)
        left = discrete_convolution(discrete_convolution(f, g), h).probs
        right = discrete_convolution(f, discrete_convolution(g, h)).probs
        np.testing.assert_allclose(left, right, atol=1e-12)


class TestConvolutionInteraction:
    def test_no_interaction(self):
        p = DiscreteLaw((0.1, 0.2, 0.7))
        assert convolution_interaction(p, DiscreteLaw.delta(0)).probs == p.probs

    def test_binomial(self):
        b = DiscreteLaw((half, half))
        out = convolution_interaction(b, b)
        assert out.probs == tuple(Fraction(int(c), 4) for c in (1, 2, 1))

    def test_shared_interaction_term(self):
        term = DiscreteLaw((0.25, 0.25, 0.5))
        for free in (DiscreteLaw((0.9, 0.1)), DiscreteLaw((0.2, 0.3, 0.1, 0.4))):
            out = convolution_interaction(free, term)
            assert all(0 <= v <= 1 for v in out.probs)
            assert sum(out.probs) == pytest.approx(1.0, abs=1e-12)

    def test_requires_law(self):
        with pytest.raises(LawError):
            convolution_interaction(DiscreteLaw((1.0,)), WeightFunction((2.0,)))

    @settings(max_examples=100, deadline=None)
    @given(float_laws(), float_laws())
    def test_never_rejects_valid_pairs(self, f, g):
        convolution_interaction(f, g)


class TestCLT:
    def test_power_matches_binomial(self):
        b = DiscreteLaw((0.5, 0.5))
        np.testing.assert_allclose(convolution_power(b, 13).as_array(),
                                   stats.binom.pmf(np.arange(14), 13, 0.5), atol=1e-15)

    def test_exact_power(self):
        b = DiscreteLaw((half, half))
        assert convolution_power(b, 5).probs[2] == Fraction(10, 32)

    def kolmogorov_oracle(self, n):
        """sup |F_n - Phi| via scipy's binomial CDF on jump points from both sides."""
        k = np.arange(n + 1)
        z = (k - n / 2) / np.sqrt(n / 4)
        right = stats.binom.cdf(k, n, 0.5)
        left = right - stats.binom.pmf(k, n, 0.5)
        phi = stats.norm.cdf(z)
        return max(np.max(np.abs(right - phi)), np.max(np.abs(left - phi)))

    @pytest.mark.parametrize("n", [1, 4, 16, 64])
    def test_matches_oracle(self, n):
        assert partial_sum_clt_distance(DiscreteLaw((0.5, 0.5)), n) == pytest.approx(
            self.kolmogorov_oracle(n), abs=1e-12)

    def test_far_at_one(self):
        assert partial_sum_clt_distance(DiscreteLaw((0.5, 0.5)), 1) >= 0.1

    def test_monotone_and_small(self):
        d = [partial_sum_clt_distance(DiscreteLaw((0.5, 0.5)), n) for n in (4, 16, 64)]
        assert d[0] >= d[1] >= d[2]
        assert d[2] < 0.05

    def test_zero_variance_rejected(self):
        with pytest.raises(LawError, match="zero variance"):
            partial_sum_clt_distance(DiscreteLaw.delta(2), 4)
