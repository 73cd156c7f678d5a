import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.special import expit, logit

from refjournals.data import CountsMatrix, InstitutionProfile, TargetLevel
from refjournals.exceptions import DataError
from refjournals.model import (ModelState, PoissonBinomialPosterior, derive_three_star,
                               grad_log_posterior, log_posterior)


def prior_terms(state):
    """Hyperprior and prior terms on the unconstrained scale, from scipy."""
    pi = expit(state.theta)
    a, b = state.gamma * state.mu, state.gamma * (1 - state.mu)
    lp = np.sum(stats.beta(a, b).logpdf(pi) + np.log(pi) + np.log1p(-pi))
    lp += stats.uniform.logpdf(state.mu) + math.log(state.mu) + math.log1p(-state.mu)
    lp += stats.gamma(0.1, scale=20.0).logpdf(state.gamma) + math.log(state.gamma)
    lp += stats.norm(0, 3).logpdf(state.alpha)
    return lp


def brute_force_loglik(X, y, theta, alpha, envir):
    """Sum over all latent per-journal success counts consistent with y_i."""
    total = 0.0
    for i in range(X.shape[0]):
        p = expit(theta + alpha * envir[i])
        prob = 0.0
        for ys in itertools.product(*[range(x + 1) for x in X[i]]):
            if sum(ys) == y[i]:
                prob += np.prod([stats.binom(x, pj).pmf(k) for x, pj, k in zip(X[i], p, ys)])
        total += math.log(prob)
    return total


def dataset(X, y4, y34=None, envir=None):
    X = np.asarray(X)
    y34 = y4 if y34 is None else y34
    envir = np.zeros(len(X)) if envir is None else envir
    insts = [f"i{k}" for k in range(len(X))]
    counts = CountsMatrix(insts, [f"j{k}" for k in range(X.shape[1])], X)
    profiles = [InstitutionProfile(f"i{k}", int(X[k].sum()), int(y4[k]), int(y34[k]), 1.0,
                                   float(envir[k])) for k in range(len(X))]
    return counts, profiles


class TestLogPosterior:
    def test_binomial_collapse(self):
        counts, profiles = dataset([[12]], [5])
        st_ = ModelState(np.array([0.3]), 0.4, 3.0, 0.0)
        expected = stats.binom(12, expit(0.3)).logpmf(5) + prior_terms(st_)
        assert log_posterior(st_, counts, profiles, "4") == pytest.approx(expected, abs=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force_small(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.integers(0, 2, (2, 2)) + np.array([[1, 0], [0, 1]])
        X = np.minimum(X, 3)
        y = np.array([rng.integers(0, X[i].sum() + 1) for i in range(2)])
        envir = np.array([-0.5, 0.5])
        st_ = ModelState(rng.normal(size=2), rng.uniform(0.1, 0.9), rng.uniform(0.5, 5),
                         rng.normal())
        counts, profiles = dataset(X, y, envir=envir)
        expected = brute_force_loglik(X, y, st_.theta, st_.alpha, envir) + prior_terms(st_)
        assert log_posterior(st_, counts, profiles, TargetLevel.FOUR_STAR) == pytest.approx(
            expected, abs=1e-10)

    def test_target_selects_counts(self):
        counts, profiles = dataset([[3, 2], [1, 4]], [1, 2], [3, 4])
        s = ModelState(np.array([0.1, -0.2]), 0.5, 2.0)
        post4 = PoissonBinomialPosterior(counts.counts, [1, 2])
        post34 = PoissonBinomialPosterior(counts.counts, [3, 4])
        assert log_posterior(s, counts, profiles, "4") == pytest.approx(post4.log_density(post4.pack(s)))
        assert log_posterior(s, counts, profiles, "34") == pytest.approx(post34.log_density(post34.pack(s)))

    def test_alpha_only_through_prior_when_envir_zero(self):
        counts, profiles = dataset([[3, 2], [1, 4]], [2, 3])
        lp = [log_posterior(ModelState(np.array([0.1, -0.2]), 0.5, 2.0, a), counts, profiles, "4")
              - stats.norm(0, 3).logpdf(a) for a in (-2.0, 0.0, 1.5)]
        assert np.ptp(lp) < 1e-12

    def test_column_permutation(self, rng):
        X = rng.integers(0, 5, (4, 3))
        y = np.array([rng.integers(0, X[i].sum() + 1) for i in range(4)])
        theta = rng.normal(size=3)
        counts, profiles = dataset(X, y)
        perm = [2, 0, 1]
        counts_p, _ = dataset(X[:, perm], y)
        s = ModelState(theta, 0.3, 4.0, 0.2)
        sp = ModelState(theta[perm], 0.3, 4.0, 0.2)
        assert log_posterior(s, counts, profiles, "4") == pytest.approx(
            log_posterior(sp, counts_p, profiles, "4"), abs=1e-10)
        g = grad_log_posterior(s, counts, profiles, "4")
        gp = grad_log_posterior(sp, counts_p, profiles, "4")
        np.testing.assert_allclose(gp[:3], g[:3][perm], atol=1e-10)
        np.testing.assert_allclose(gp[3:], g[3:], atol=1e-10)

    def test_empty_column_adds_only_prior(self):
        X = np.array([[3, 2], [1, 4]])
        counts, profiles = dataset(X, [2, 3])
        counts_e, _ = dataset(np.column_stack([X, [0, 0]]), [2, 3])
        s = ModelState(np.array([0.1, -0.2]), 0.35, 2.5)
        se = ModelState(np.array([0.1, -0.2, 0.7]), 0.35, 2.5)
        diff = log_posterior(se, counts_e, profiles, "4") - log_posterior(s, counts, profiles, "4")
        pi = expit(0.7)
        term = stats.beta(2.5 * 0.35, 2.5 * 0.65).logpdf(pi) + math.log(pi * (1 - pi))
        assert diff == pytest.approx(term, abs=1e-10)

    def test_conjugate_structure(self):
        # one merged journal, alpha = 0: the theta-conditional equals the
        # Beta(a + y, b + n - y) density on the logit scale up to a constant
        counts, profiles = dataset([[10], [15]], [4, 9])
        mu, gamma = 0.3, 5.0
        a, b = mu * gamma, (1 - mu) * gamma
        post = stats.beta(a + 13, b + 12)
        thetas = np.linspace(-2, 2, 9)
        lp = np.array([log_posterior(ModelState(np.array([t]), mu, gamma), counts, profiles, "4")
                       for t in thetas])
        ref = np.array([post.logpdf(expit(t)) + math.log(expit(t) * (1 - expit(t))) for t in thetas])
        assert np.ptp(lp - ref) < 1e-9

    def test_errors(self):
        counts, profiles = dataset([[3, 2]], [2])
        with pytest.raises(DataError):
            log_posterior(ModelState(np.zeros(3), 0.5, 1.0), counts, profiles, "4")
        with pytest.raises(DataError):
            PoissonBinomialPosterior([[3, 2]], [6])
        with pytest.raises(ValueError):
            ModelState(np.zeros(2), 1.0, 1.0)
        with pytest.raises(ValueError):
            ModelState(np.zeros(2), 0.5, 0.0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_finite_everywhere(self, seed):
        rng = np.random.default_rng(seed)
        I, J = rng.integers(1, 5), rng.integers(1, 6)
        X = rng.integers(0, 6, (I, J))
        y = np.array([rng.integers(0, X[i].sum() + 1) for i in range(I)])
        envir = rng.normal(0, 1, I)
        counts, profiles = dataset(X, y, envir=envir - envir.mean())
        s = ModelState(rng.normal(0, 4, J), rng.uniform(1e-3, 1 - 1e-3),
                       float(np.exp(rng.uniform(-5, 5))), rng.normal(0, 3))
        assert np.isfinite(log_posterior(s, counts, profiles, "4"))


def fd_gradient(post, z, h=1e-6):
    g = np.empty_like(z)
    for k in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[k] += h
        zm[k] -= h
        g[k] = (post.log_density(zp) - post.log_density(zm)) / (2 * h)
    return g


class TestGradient:
    def test_fd_fixture(self, rng):
        X = np.array([[4, 2, 1], [1, 3, 5]])
        post = PoissonBinomialPosterior(X, [3, 5], np.array([-0.4, 0.4]))
        z = np.r_[rng.normal(size=3), 0.2, 0.5, 0.3]
        g = post.log_density_and_grad(z)[1]
        np.testing.assert_allclose(g, fd_gradient(post, z), rtol=1e-5, atol=1e-7)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_fd_random(self, seed):
        rng = np.random.default_rng(seed)
        I, J = rng.integers(1, 5), rng.integers(1, 6)
        X = rng.integers(0, 8, (I, J))
        y = np.array([rng.integers(0, X[i].sum() + 1) for i in range(I)])
        envir = rng.normal(0, 1, I)
        post = PoissonBinomialPosterior(X, y, envir - envir.mean())
        z = np.r_[rng.normal(0, 1.5, J), rng.normal(), rng.normal(), rng.normal()]
        g = post.log_density_and_grad(z)[1]
        f = fd_gradient(post, z)
        assert np.all(np.abs(g - f) <= 1e-5 * np.maximum(np.abs(f), 1e-1))

    def test_symmetric_columns(self):
        X = np.array([[2, 2, 1], [3, 3, 4]])
        post = PoissonBinomialPosterior(X, [2, 6])
        g = post.log_density_and_grad(np.r_[0.4, 0.4, -0.1, 0.0, 0.3, 0.0])[1]
        assert g[0] == g[1]

    def test_alpha_gradient_zero_at_origin(self):
        post = PoissonBinomialPosterior(np.array([[2, 1], [1, 3]]), [1, 2])
        g = post.log_density_and_grad(np.r_[0.2, -0.3, 0.1, 0.4, 0.0])[1]
        assert g[-1] == 0.0


class TestThreeStar:
    def test_difference(self):
        d = derive_three_star(np.array([[0.4]]), np.array([[0.9]]))
        assert d.draws[0, 0] == pytest.approx(0.5)

    def test_identical_streams(self, rng):
        x = rng.uniform(size=(100, 3))
        d = derive_three_star(x, x)
        assert np.all(d.draws == 0)
        assert not d.flagged.any()

    def test_negative_mass_flagged(self, rng):
        d4 = rng.uniform(0.4, 0.6, (400, 2))
        d34 = d4.copy()
        d34[:, 0] += 0.2
        d34[:, 1] = d4[:, 1] + rng.normal(0.02, 0.05, 400)
        d = derive_three_star(d4, d34)
        assert d.negative_fraction[0] == 0
        assert d.negative_fraction[1] > 0.1
        assert d.flagged.tolist() == [False, True]
        assert np.any(d.draws < 0)  # kept, not clamped

    def test_thins_longer_stream(self, rng):
        d = derive_three_star(rng.uniform(size=(100, 2)), rng.uniform(size=(50, 2)))
        assert d.draws.shape == (50, 2)

    def test_interval_ordering(self, rng):
        d = derive_three_star(rng.uniform(0, 0.5, (300, 4)), rng.uniform(0.3, 1, (300, 4)))
        assert np.all(d.lo95 <= d.lo50) and np.all(d.lo50 <= d.median)
        assert np.all(d.median <= d.hi50) and np.all(d.hi50 <= d.hi95)
