"""Scikit-learn style wrappers around the HMC and EM journal models.

``X`` is the institutions x journals count matrix and ``y`` the number of
successes per institution at one target level.  ``predict`` returns the
expected number of successes ``X @ pi``.
"""
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .em import EmConfig, em_run
from .exceptions import DataError
from .model import PoissonBinomialPosterior
from .sampler import ChainConfig, run_chains, summarize


def _check_counts(X, y=None):
    if y is None:
        X = check_array(X, dtype=None)
    else:
        X, y = check_X_y(X, y, dtype=None)
    X = np.asarray(X)
    if np.any(X < 0) or not np.all(np.equal(np.mod(X, 1), 0)):
        raise DataError("X must hold non-negative integer counts")
    X = X.astype(np.int64)
    if y is None:
        return X
    y = np.asarray(y)
    if not np.all(np.equal(np.mod(y, 1), 0)):
        raise DataError("y must hold integer success counts")
    return X, y.astype(np.int64)


class _JournalModel(RegressorMixin, BaseEstimator):
    def predict(self, X):
        """Expected successes per institution, ``X @ pi_``."""
        check_is_fitted(self, "pi_")
        X = _check_counts(X)
        if X.shape[1] != self.pi_.size:
            raise DataError(f"X has {X.shape[1]} columns, model was fitted on {self.pi_.size}")
        return X @ self.pi_


class PoissonBinomialHMC(_JournalModel):
    """Hierarchical Poisson-binomial journal model sampled with NUTS.

    Parameters
    ----------
    chains, warmup, samples : int
        Number of chains and warmup/kept iterations per chain.
    target_accept : float
    max_depth : int
        Maximum tree depth of the trajectory.
    seed : int
    n_jobs : int
        Chains run in this many threads.

    Attributes
    ----------
    draws_ : PosteriorDraws
        Draws of ``pi[j]``, ``mu``, ``gamma`` and ``alpha``.
    summary_ : dict
        :func:`refjournals.sampler.summarize` output.
    pi_ : ndarray of shape (n_journals,)
        Posterior medians of the journal probabilities.
    coef_ : ndarray of shape (n_journals,)
        Logits of ``pi_``.
    """

    def __init__(self, chains=4, warmup=1000, samples=1000, target_accept=0.8, max_depth=10,
                 seed=0, n_jobs=1):
        self.chains = chains
        self.warmup = warmup
        self.samples = samples
        self.target_accept = target_accept
        self.max_depth = max_depth
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, X, y, envir=None):
        X, y = _check_counts(X, y)
        post = PoissonBinomialPosterior(X, y, envir)
        config = ChainConfig(self.chains, self.warmup, self.samples, self.seed,
                             self.target_accept, self.max_depth, self.n_jobs)
        self.posterior_ = post
        self.draws_ = run_chains(post.log_density_and_grad, post.init_point, config,
                                 names=post.constrained_names, transform=post.constrain)
        self.summary_ = summarize(self.draws_, diagnostics=self.chains >= 2 and self.samples >= 100)
        J = X.shape[1]
        self.pi_ = np.array([self.summary_[f"pi[{j}]"].median for j in range(J)])
        self.coef_ = np.log(self.pi_) - np.log1p(-self.pi_)
        self.alpha_ = self.summary_["alpha"].median
        self.n_features_in_ = J
        return self

    def pi_draws(self):
        """Journal probability draws, shape (chains * iterations, n_journals)."""
        check_is_fitted(self, "draws_")
        return self.draws_.flat()[:, : self.n_features_in_]


class HypergeometricEM(_JournalModel):
    """Point estimates by EM over noncentral hypergeometric imputations.

    Parameters
    ----------
    pseudo_strength : float
        Pseudo-articles per journal in the regularizing pseudo-institution.
    tol : float
        Convergence tolerance on the largest change in journal effects.
    max_iters : int
    seed : int
        Seed of the logit-normal initialization.
    reference : int, optional
        Column whose effect is pinned to zero (default: column 0).

    Attributes
    ----------
    result_ : EmResult
    pi_ : ndarray of shape (n_journals,)
    coef_ : ndarray of shape (n_journals,)
        Log odds ``mu + beta_j``.
    """

    def __init__(self, pseudo_strength=1.0, tol=1e-6, max_iters=500, seed=0, reference=None):
        self.pseudo_strength = pseudo_strength
        self.tol = tol
        self.max_iters = max_iters
        self.seed = seed
        self.reference = reference

    def fit(self, X, y):
        X, y = _check_counts(X, y)
        config = EmConfig(self.pseudo_strength, self.tol, self.max_iters, self.seed)
        self.result_ = em_run(X, y, config, reference=self.reference)
        self.pi_ = self.result_.pi
        self.coef_ = self.result_.log_odds
        self.n_features_in_ = X.shape[1]
        return self
