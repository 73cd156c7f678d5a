import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import ndtr, ndtri

from refjournals.data import CountsMatrix, InstitutionProfile
from refjournals.exceptions import DataError, DegenerateInputError
from refjournals.metrics import (FundingConfig, Predictions, dissimilarity, ecological_bounds,
                                 funding_units, funding_value, match_external, metric_correlation,
                                 money_redistribution, predict, probit_gap)


def profile(name, N, y4, y34, fte=1.0):
    return InstitutionProfile(name, N, y4, y34, fte, 0.0)


def one_institution_example():
    # N=10: observed (4*, 3*) = (4, 4), predicted (3, 5)
    return [profile("a", 10, 4, 8, fte=10.0)], Predictions(np.array([3.0]), np.array([8.0]),
                                                            np.array([10.0]))


class TestPredict:
    def test_single_journal(self):
        p = predict(np.array([[10]]), [0.5], [0.7])
        assert p.yhat4[0] == 5.0 and p.yhat34[0] == pytest.approx(7.0)

    def test_two_journals_dot_product(self):
        p = predict(np.array([[3, 7]]), [0.2, 0.6], [0.5, 0.9])
        assert p.yhat4[0] == pytest.approx(4.8, abs=1e-12)

    def test_equal_levels_zero_three_star(self):
        pi = np.array([0.1, 0.4, 0.9])
        p = predict(np.array([[1, 2, 3], [4, 0, 1]]), pi, pi)
        assert np.all(p.yhat3 == 0)

    def test_negative_three_star_flagged_not_clamped(self):
        p = predict(np.array([[2, 2], [0, 5]]), [0.6, 0.1], [0.4, 0.2])
        assert p.yhat3[0] == pytest.approx(-0.2)
        assert p.negative_three_star.tolist() == [0]

    def test_keeps_institutions(self):
        cm = CountsMatrix(["x", "y"], ["j", "Other journals"], np.array([[1, 2], [3, 4]]))
        assert predict(cm, [0.5, 0.5], [0.6, 0.6]).institutions == ["x", "y"]

    def test_errors(self):
        with pytest.raises(DataError):
            predict(np.array([[1, 2]]), [0.5], [0.5, 0.5])
        with pytest.raises(DataError):
            predict(np.array([[1, 2]]), [0.5, 1.5], [0.5, 0.5])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_linear(self, seed):
        rng = np.random.default_rng(seed)
        A, B = rng.integers(0, 9, (2, 4, 5))
        pi4 = rng.uniform(size=5)
        pi34 = np.minimum(1, pi4 + rng.uniform(0, 0.3, 5))
        pa, pb, pab = predict(A, pi4, pi34), predict(B, pi4, pi34), predict(A + B, pi4, pi34)
        np.testing.assert_allclose(pab.yhat4, pa.yhat4 + pb.yhat4, atol=1e-12)
        np.testing.assert_allclose(pab.yhat34, pa.yhat34 + pb.yhat34, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_ordering_when_probabilities_ordered(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.integers(0, 9, (3, 6))
        pi4 = rng.uniform(size=6)
        pi34 = pi4 + (1 - pi4) * rng.uniform(size=6)
        p = predict(X, pi4, pi34)
        assert np.all(p.yhat4 >= 0) and np.all(p.yhat4 <= p.yhat34 + 1e-12)
        assert np.all(p.yhat34 <= X.sum(axis=1) + 1e-12)


class TestDissimilarity:
    def test_hand_example(self):
        profs, pred = one_institution_example()
        assert abs(dissimilarity(profs, pred) - 0.10) < 1e-12

    def test_perfect_prediction_is_zero(self):
        profs = [profile("a", 10, 3, 7), profile("b", 5, 0, 2)]
        pred = Predictions(np.array([3.0, 0.0]), np.array([7.0, 2.0]), np.array([10.0, 5.0]))
        assert dissimilarity(profs, pred) == 0.0

    def test_zero_only_if_all_categories_match(self):
        profs = [profile("a", 10, 3, 7)]
        # 4* right, 3* and below-3* wrong by one
        pred = Predictions(np.array([3.0]), np.array([8.0]), np.array([10.0]))
        assert dissimilarity(profs, pred) > 0

    def test_relabel_invariance(self, rng):
        N = rng.integers(5, 30, 6)
        y4 = rng.integers(0, N // 2 + 1)
        y34 = y4 + rng.integers(0, N - y4 + 1)
        profs = [profile(str(i), int(N[i]), int(y4[i]), int(y34[i]), 1 + i) for i in range(6)]
        h4 = rng.uniform(0, 1, 6) * N / 2
        h34 = h4 + rng.uniform(0, 1, 6) * N / 2
        pred = Predictions(h4, h34, N.astype(float))
        perm = rng.permutation(6)
        pperm = Predictions(h4[perm], h34[perm], N[perm].astype(float))
        plist = [profs[i] for i in perm]
        assert dissimilarity(plist, pperm) == pytest.approx(dissimilarity(profs, pred), abs=1e-15)
        assert money_redistribution(plist, pperm) == pytest.approx(
            money_redistribution(profs, pred), abs=1e-15)

    def test_bounded(self, rng):
        for _ in range(200):
            N = int(rng.integers(1, 20))
            y4 = int(rng.integers(0, N + 1))
            y34 = int(rng.integers(y4, N + 1))
            h4 = rng.uniform(0, N)
            h34 = rng.uniform(h4, N)
            d = dissimilarity([profile("a", N, y4, y34)],
                              Predictions(np.array([h4]), np.array([h34]), np.array([float(N)])))
            assert 0 <= d <= 1

    def test_row_mismatch(self):
        with pytest.raises(DataError):
            dissimilarity([profile("a", 10, 1, 2)], Predictions(np.zeros(2), np.zeros(2), np.ones(2)))


class TestMoneyRedistribution:
    def test_hand_example(self):
        profs, pred = one_institution_example()
        assert abs(money_redistribution(profs, pred) - 0.075) < 1e-12

    def test_perfect_prediction_is_zero(self):
        profs = [profile("a", 10, 3, 7, 2.0), profile("b", 4, 1, 1, 3.0)]
        pred = Predictions(np.array([3.0, 1.0]), np.array([7.0, 1.0]), np.array([10.0, 4.0]))
        assert money_redistribution(profs, pred) == 0.0

    @pytest.mark.parametrize("r3", [0.5, 2.0, 1234.5])
    def test_scale_invariance(self, r3):
        profs, pred = one_institution_example()
        assert money_redistribution(profs, pred, FundingConfig(r3)) == pytest.approx(0.075, abs=1e-12)

    def test_fte_override(self):
        profs = [profile("a", 10, 4, 8, 10.0), profile("b", 10, 2, 6, 10.0)]
        pred = Predictions(np.array([3.0, 2.0]), np.array([8.0, 6.0]), np.array([10.0, 10.0]))
        base = money_redistribution(profs, pred)
        assert money_redistribution(profs, pred, fte=[20.0, 20.0]) == pytest.approx(base)
        assert money_redistribution(profs, pred, fte=[1.0, 20.0]) < base

    def test_errors(self):
        pred = Predictions(np.array([1.0]), np.array([2.0]), np.array([10.0]))
        with pytest.raises(DataError):
            money_redistribution([profile("a", 10, 1, 2, 0.0)], pred)
        with pytest.raises(DegenerateInputError):
            money_redistribution([profile("a", 10, 0, 0, 1.0)], pred)

    def test_funding_config(self):
        assert FundingConfig(2.5).r4 / FundingConfig(2.5).r3 == 4
        with pytest.raises(ValueError):
            FundingConfig(0)
        np.testing.assert_allclose(funding_units([0.4], [0.4], [10.0]), [20.0])


class TestFundingValue:
    def test_worked_example(self):
        x3, x4 = funding_value(5_328_295, 395.5104, 265.0912)
        assert abs(x3 - 3659.86) < 0.005 and abs(x4 - 14639.43) < 0.005

    def test_trivial(self):
        assert funding_value(5, 1, 1) == (1.0, 4.0)
        assert funding_value(10, 4, 0) == (2.5, 10.0)

    def test_zero_denominator(self):
        with pytest.raises(DegenerateInputError):
            funding_value(1, 0, 0)

    @settings(max_examples=200)
    @given(st.floats(0, 1e9), st.floats(0.001, 1e4), st.floats(0, 1e4))
    def test_ratio_exact(self, F, n3, n4):
        x3, x4 = funding_value(F, n3, n4)
        assert x4 == 4 * x3


class TestEcologicalBounds:
    def test_turnout_example(self):
        (lo_b, hi_b), (lo_w, hi_w) = ecological_bounds(0.7, 0.4)
        assert lo_b == pytest.approx(1 / 7, abs=1e-12) and hi_b == pytest.approx(4 / 7, abs=1e-12)
        assert (lo_w, hi_w) == (0.0, 1.0)
        assert abs(100 * lo_b - 14) < 0.5 and abs(100 * hi_b - 57) < 0.5

    def test_zero_turnout(self):
        assert ecological_bounds(0.3, 0.0) == ((0.0, 0.0), (0.0, 0.0))

    def test_half_half(self):
        assert ecological_bounds(0.5, 0.5) == ((0.0, 1.0), (0.0, 1.0))

    def test_errors(self):
        for X in (0.0, 1.0):
            with pytest.raises(DegenerateInputError):
                ecological_bounds(X, 0.5)
        with pytest.raises(ValueError):
            ecological_bounds(0.5, 1.2)

    def test_contains_truth(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(0.001, 0.999, 10_000)
        bb, bw = rng.uniform(size=(2, 10_000))
        T = X * bb + (1 - X) * bw
        for x, t, b, w in zip(X, np.clip(T, 0, 1), bb, bw):
            (lb, hb), (lw, hw) = ecological_bounds(x, t)
            assert lb - 1e-9 <= b <= hb + 1e-9
            assert lw - 1e-9 <= w <= hw + 1e-9


class TestProbitGap:
    def test_proportional_odds_zero_slope(self):
        pi4 = np.linspace(0.05, 0.8, 12)
        g = probit_gap(pi4, ndtr(ndtri(pi4) + 0.5))
        assert abs(g.slope) < 1e-9
        assert g.intercept == pytest.approx(0.5, abs=1e-9)
        assert not g.flagged and not g.excluded

    def test_two_point_slope(self):
        g = probit_gap([ndtr(-1.0), ndtr(0.5)], [ndtr(0.0), ndtr(0.8)])
        np.testing.assert_allclose(g.c, [1.0, 0.3], atol=1e-12)
        assert g.slope == pytest.approx(-0.7 / 1.5, abs=1e-12)
        assert g.intercept == pytest.approx(1 - 0.7 / 1.5, abs=1e-12)

    def test_shrinking_gap_negative_slope(self):
        pi4 = np.linspace(0.05, 0.8, 12)
        z = ndtri(pi4)
        g = probit_gap(pi4, ndtr(z + 1.0 - 0.3 * z))
        assert g.slope < 0
        assert g.slope == pytest.approx(-0.3, abs=1e-9)

    def test_flags_and_exclusions(self):
        g = probit_gap([0.3, 0.5, 0.0, 0.2], [0.3, 0.4, 0.2, 0.6], names=["a", "b", "c", "d"])
        assert g.excluded == ["c"]
        assert g.flagged == ["a", "b"]
        assert g.included.tolist() == [0, 1, 3]

    def test_probit_accuracy(self):
        p = np.array([1e-6, 0.025, 0.5, 0.975, 1 - 1e-6])
        np.testing.assert_allclose(ndtr(ndtri(p)), p, rtol=1e-12)


class TestMetricCorrelation:
    journals = [("J A", "ja", ["1111-1111"]), ("J B", "jb", []), ("J C", "jc", ["2222-2222"]),
                ("J D", "jd", []), ("J E", "je", [])]

    def test_identity(self):
        med = np.array([0.1, 0.2, 0.35, 0.5, 0.9])
        ext = [(n, "", m) for (n, _, _), m in zip(self.journals, med)]
        r = metric_correlation(med, self.journals, ext)
        assert r.pearson == pytest.approx(1.0) and r.spearman == pytest.approx(1.0)
        assert r.slope == pytest.approx(1.0) and r.n_matched == 5

    def test_reversed_ranks(self):
        med = np.array([0.1, 0.2, 0.35, 0.5, 0.9])
        ext = [(n, "", 5 - k) for k, (n, _, _) in enumerate(self.journals)]
        assert metric_correlation(med, self.journals, ext).spearman == pytest.approx(-1.0)

    def test_five_point_pearson(self):
        # x = 1..5, y = (2, 4, 5, 4, 5): Sxy = 6, Sxx = 10, Syy = 6
        med = np.array([0.2, 0.4, 0.5, 0.4, 0.5])
        ext = [(n, "", k + 1) for k, (n, _, _) in enumerate(self.journals)]
        r = metric_correlation(med, self.journals, ext)
        assert abs(r.pearson - 6 / np.sqrt(60)) < 1e-12
        assert r.slope == pytest.approx(0.06, abs=1e-12)

    def test_issn_preferred_and_unmatched(self):
        ext = [("unrelated title", "1111-1111", 3.0), ("J B", "", 1.0), ("J C", "2222-2222", 2.0),
               ("Nothing", "9999-9999", 8.0)]
        r = metric_correlation(np.array([0.3, 0.1, 0.2, 0.4, 0.5]), self.journals, ext)
        assert r.n_matched == 3 and r.unmatched == ["J D", "J E"]
        assert r.pearson == pytest.approx(1.0)

    def test_log_transform(self):
        med = np.array([0.0, 1.0, 2.0, 3.0, 4.0]) / 10
        ext = [(n, "", 10.0 ** k) for k, (n, _, _) in enumerate(self.journals)]
        r = metric_correlation(med, self.journals, ext, log_transform=True)
        assert r.pearson == pytest.approx(1.0) and r.slope == pytest.approx(0.1)
        with pytest.raises(DataError):
            metric_correlation(med, self.journals, [(n, "", 0.0) for n, _, _ in self.journals], True)

    def test_too_few_matches(self):
        with pytest.raises(DataError, match="matched"):
            metric_correlation(np.ones(5) / 2, self.journals, [("J A", "", 1.0), ("J B", "", 2.0)])

    def test_ambiguity_is_error(self):
        with pytest.raises(DataError):
            match_external(self.journals, [("x", "1111-1111", 1.0), ("y", "1111-1111", 2.0)])
        with pytest.raises(DataError):
            match_external(self.journals, [("J A", "", 1.0), ("The J A", "", 2.0)])
        two = [("J A", "ja", ["1111-1111", "2222-2222"])]
        with pytest.raises(DataError):
            match_external(two, [("x", "1111-1111", 1.0), ("y", "2222-2222", 2.0)])
