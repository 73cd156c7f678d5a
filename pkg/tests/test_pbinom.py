import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.special import expit, logit

from refjournals import pbinom
from refjournals.exceptions import DegenerateInputError, UnsupportedInputError
from refjournals.pbinom import grad_log_pmf, log_pmf_dp, log_pmf_shah, moments

from conftest import enumerate_pmf

prob_lists = st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=12)
open_probs = st.lists(st.floats(0.01, 0.99), min_size=1, max_size=30)


class TestLogPmfDp:
    def test_single_fair_trial(self):
        np.testing.assert_allclose(np.exp(log_pmf_dp([0.5])), [0.5, 0.5], rtol=0, atol=1e-15)

    def test_all_zero(self):
        t = log_pmf_dp([0.0, 0.0, 0.0])
        assert t[0] == 0.0
        assert np.all(np.isneginf(t[1:]))

    def test_three_trials_by_hand(self):
        np.testing.assert_allclose(np.exp(log_pmf_dp([0.1, 0.2, 0.3])),
                                   [0.504, 0.398, 0.092, 0.006], atol=1e-15)

    def test_sure_trials_shift_support(self):
        t = np.exp(log_pmf_dp([1.0, 0.5, 1.0, 0.0]))
        np.testing.assert_allclose(t, [0, 0, 0.5, 0.5, 0], atol=1e-15)

    @pytest.mark.parametrize("bad", [[0.5, np.nan], [1.2], [-0.1], []])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            log_pmf_dp(bad)

    @settings(max_examples=200, deadline=None)
    @given(prob_lists)
    def test_matches_enumeration(self, probs):
        np.testing.assert_allclose(np.exp(log_pmf_dp(probs)), enumerate_pmf(probs),
                                   rtol=0, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 2000), st.integers(0, 2**32 - 1))
    def test_normalized(self, n, seed):
        p = np.random.default_rng(seed).uniform(size=n)
        t = log_pmf_dp(p)
        assert np.all(t <= 0)
        assert abs(np.logaddexp.reduce(t)) < 1e-10

    def test_binomial_special_case(self):
        t = log_pmf_dp([0.5] * 200)
        np.testing.assert_allclose(t, stats.binom(200, 0.5).logpmf(np.arange(201)), rtol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=40), st.randoms())
    def test_permutation_invariance_bitwise(self, probs, r):
        shuffled = list(probs)
        r.shuffle(shuffled)
        assert np.array_equal(log_pmf_dp(probs), log_pmf_dp(shuffled))


class TestMoments:
    def test_examples(self):
        assert moments([0.5, 0.5]) == (1.0, 0.5)
        assert moments([1.0, 1.0]) == (2.0, 0.0)
        m, v = moments([0.1, 0.2, 0.3])
        assert m == pytest.approx(0.6, abs=1e-15)
        assert v == pytest.approx(0.46, abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=300))
    def test_agree_with_table(self, probs):
        pmf = np.exp(log_pmf_dp(probs))
        k = np.arange(pmf.size)
        mean = (k * pmf).sum()
        var = (k**2 * pmf).sum() - mean**2
        m, v = moments(probs)
        assert abs(mean - m) < 1e-9 * max(1.0, m)
        assert abs(var - v) < 1e-9 * max(1.0, m**2)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.0, 1.0), st.integers(1, 20)), min_size=1, max_size=8))
    def test_multinomial_limit_variance(self, groups):
        # aggregated compound multinomial variance diag(P'w) - P' diag(w) P
        # with dispersion weights w_j = x_j (x_j + a) / (1 + a); as a grows
        # w_j -> x_j and it must equal the Poisson-binomial variance
        probs = [p for p, x in groups for _ in range(x)]
        x = np.array([x for _, x in groups], dtype=float)
        P = np.array([p for p, _ in groups])

        def compound_var(w):
            return float(P @ w - P @ np.diag(w) @ P)

        a = 1e12
        w = x * (x + a) / (1 + a)
        assert moments(probs)[1] == pytest.approx(compound_var(x), rel=1e-12, abs=1e-12)
        assert compound_var(w) == pytest.approx(compound_var(x), rel=1e-9, abs=1e-9)


class TestShah:
    def test_base_case(self):
        assert log_pmf_shah([0.3, 0.6], 0) == pytest.approx(math.log(0.28), abs=1e-15)

    def test_hand_example(self):
        assert log_pmf_shah([0.1, 0.2, 0.3], 2) == pytest.approx(math.log(0.092), abs=1e-12)

    def test_binomial_200(self):
        ref = stats.binom(200, 0.5).logpmf(100)
        assert abs(log_pmf_shah([0.5] * 200, 100) - log_pmf_dp([0.5] * 200)[100]) < 1e-8
        assert abs(log_pmf_shah([0.5] * 200, 100) - ref) < 1e-8

    def test_rejects_sure_trial(self):
        with pytest.raises(UnsupportedInputError):
            log_pmf_shah([0.2, 1.0], 1)

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            log_pmf_shah([0.2, 0.3], 3)

    @pytest.mark.parametrize("n", [5, 50, 200, 500])
    def test_agrees_with_dp(self, n, rng):
        p = rng.uniform(0, 0.99, n)
        shah = pbinom.shah_log_table(p)
        dp = log_pmf_dp(p)
        assert np.max(np.abs(shah - dp)) < 1e-8

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0.0, 0.99), min_size=1, max_size=60))
    def test_agrees_with_dp_property(self, probs):
        shah = pbinom.shah_log_table(probs)
        dp = log_pmf_dp(probs)
        finite = np.isfinite(dp)
        assert np.array_equal(finite, np.isfinite(shah))
        assert np.max(np.abs(shah[finite] - dp[finite])) < 1e-8


def fd_grad(probs, k, h=1e-6):
    z = logit(np.asarray(probs, dtype=float))
    out = np.empty(z.size)
    for j in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        out[j] = (log_pmf_dp(expit(zp))[k] - log_pmf_dp(expit(zm))[k]) / (2 * h)
    return out


class TestGradient:
    def test_single_trial(self):
        assert grad_log_pmf([0.8], 1)[0] == pytest.approx(0.2, abs=1e-15)
        assert grad_log_pmf([0.8], 0)[0] == pytest.approx(-0.8, abs=1e-15)

    @pytest.mark.parametrize("k", [0, 1, 2, 3])
    def test_three_trials_fd(self, k):
        p = [0.1, 0.2, 0.3]
        np.testing.assert_allclose(grad_log_pmf(p, k), fd_grad(p, k), rtol=1e-6, atol=1e-9)

    def test_equal_entries_equal_components(self):
        g = grad_log_pmf([0.3, 0.7, 0.3, 0.55], 2)
        assert g[0] == g[2]

    def test_rejects_boundary(self):
        with pytest.raises(DegenerateInputError):
            grad_log_pmf([0.0, 0.5], 1)
        with pytest.raises(DegenerateInputError):
            grad_log_pmf([1.0, 0.5], 1)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0.02, 0.98), min_size=1, max_size=50), st.data())
    def test_matches_fd(self, probs, data):
        k = data.draw(st.integers(0, len(probs)))
        g = grad_log_pmf(probs, k)
        f = fd_grad(probs, k)
        assert np.all(np.abs(g - f) <= 1e-6 * np.maximum(np.abs(f), 1e-2))

    def test_gradient_sums_to_mean_shift(self, rng):
        # sum_j dlogP/dlogit p_j = E[K | K=k] - E[K] = k - sum p
        p = rng.uniform(0.05, 0.95, 30)
        for k in (0, 7, 15, 30):
            assert grad_log_pmf(p, k).sum() == pytest.approx(k - p.sum(), abs=1e-10)

    def test_extreme_probabilities_stay_accurate(self):
        p = np.r_[np.full(20, 1e-4), np.full(20, 1 - 1e-4), np.linspace(0.2, 0.8, 10)]
        for k in (5, 20, 25, 35):
            g = grad_log_pmf(p, k)
            assert g.sum() == pytest.approx(k - p.sum(), abs=1e-8)


class TestLeaveOneOut:
    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0.01, 0.99), min_size=2, max_size=60), st.data())
    def test_deconvolution_matches_recompute(self, probs, data):
        j = data.draw(st.integers(0, len(probs) - 1))
        table = log_pmf_dp(probs)
        loo, err = pbinom.leave_one_out(table, probs[j])
        direct = log_pmf_dp(probs[:j] + probs[j + 1:])
        ok = err < 1e-8
        np.testing.assert_allclose(np.exp(loo[ok]), np.exp(direct[ok]), rtol=1e-7, atol=1e-300)

    def test_rejects_boundary(self):
        with pytest.raises(DegenerateInputError):
            pbinom.leave_one_out(log_pmf_dp([0.3, 0.4]), 1.0)
