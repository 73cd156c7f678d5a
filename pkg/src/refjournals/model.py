"""Hierarchical Poisson-binomial posterior over journal success probabilities.

Institution i's success count is Poisson-binomial with one trial per
submitted output; an output in journal j succeeds with probability
``expit(theta_j + alpha * envir_i)``.  Journal probabilities share a Beta
prior with mean ``mu`` and concentration ``gamma``; ``mu`` is uniform,
``gamma`` is Gamma(shape 1/10, rate 1/20) and ``alpha`` is Normal(0, 3^2).

The sampler works on the unconstrained vector
``[theta_1..theta_J, logit(mu), log(gamma), alpha]``; Jacobians of the
transforms are included in the density.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import betaln, digamma, expit, gammaln, log_expit, logit

from .data import TargetLevel, align_profiles
from .exceptions import DataError
from .pbinom import _institutions_loglik_grad

GAMMA_SHAPE = 0.1
GAMMA_RATE = 0.05
ALPHA_SD = 3.0
_LOG_GAMMA_NORM = GAMMA_SHAPE * math.log(GAMMA_RATE) - math.lgamma(GAMMA_SHAPE)
_LOG_ALPHA_NORM = -math.log(ALPHA_SD) - 0.5 * math.log(2.0 * math.pi)
# flag journals whose paired 3* draws are negative more often than this
NEGATIVE_THREE_STAR_FLAG = 0.10


@dataclass(frozen=True)
class ModelState:
    theta: np.ndarray
    mu: float
    gamma: float
    alpha: float = 0.0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        if theta.ndim != 1 or not np.all(np.isfinite(theta)):
            raise ValueError("theta must be a finite 1-d vector")
        if not 0.0 < self.mu < 1.0:
            raise ValueError("mu must lie in (0, 1)")
        if not self.gamma > 0.0:
            raise ValueError("gamma must be positive")
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")

    @property
    def pi(self):
        return expit(self.theta)


class PoissonBinomialPosterior:
    """Log density and gradient of the journal model for one target level.

    Parameters
    ----------
    counts : array_like, shape (I, J)
        Outputs per institution and journal column.
    successes : array_like, shape (I,)
        Observed successes per institution.
    envir : array_like, shape (I,), optional
        Centred environment covariate; zeros when omitted.
    """

    def __init__(self, counts, successes, envir=None):
        X = np.asarray(counts)
        if X.ndim != 2:
            raise DataError("counts must be a 2-d array")
        if np.any(X < 0) or not np.all(np.equal(np.mod(X, 1), 0)):
            raise DataError("counts must be non-negative integers")
        X = X.astype(np.int64)
        y = np.asarray(successes)
        if y.shape != (X.shape[0],):
            raise DataError(f"successes has shape {y.shape}, expected ({X.shape[0]},)")
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise DataError("successes must be integers")
        y = y.astype(np.int64)
        totals = X.sum(axis=1)
        bad = np.flatnonzero((y < 0) | (y > totals))
        if bad.size:
            raise DataError(f"successes outside [0, N_i] for rows {bad.tolist()}")
        envir = np.zeros(X.shape[0]) if envir is None else np.asarray(envir, dtype=float)
        if envir.shape != (X.shape[0],):
            raise DataError(f"envir has shape {envir.shape}, expected ({X.shape[0]},)")
        self.counts = X
        self.successes = y
        self.envir = envir
        self.n_journals = X.shape[1]
        rows, cols = np.nonzero(X)
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=X.shape[0]))])
        self._cols = cols.astype(np.int64)
        self._cnt = X[rows, cols].astype(np.int64)
        self.fallbacks = 0

    @property
    def dim(self):
        return self.n_journals + 3

    @property
    def param_names(self):
        return [f"theta[{j}]" for j in range(self.n_journals)] + ["logit_mu", "log_gamma", "alpha"]

    @property
    def constrained_names(self):
        return [f"pi[{j}]" for j in range(self.n_journals)] + ["mu", "gamma", "alpha"]

    def pack(self, state):
        if state.theta.shape != (self.n_journals,):
            raise DataError(f"theta has length {state.theta.size}, expected {self.n_journals}")
        return np.concatenate([state.theta, [logit(state.mu), math.log(state.gamma), state.alpha]])

    def unpack(self, z):
        z = np.asarray(z, dtype=float)
        J = self.n_journals
        return ModelState(z[:J].copy(), float(expit(z[J])), float(math.exp(z[J + 1])), float(z[J + 2]))

    def constrain(self, z):
        """Map an unconstrained vector to ``[pi_1..pi_J, mu, gamma, alpha]``."""
        z = np.asarray(z, dtype=float)
        J = self.n_journals
        return np.concatenate([expit(z[:J]), [expit(z[J]), math.exp(z[J + 1]), z[J + 2]]])

    def log_likelihood(self, theta, alpha):
        ll, _, _, _ = _institutions_loglik_grad(
            np.ascontiguousarray(theta, dtype=float), float(alpha), self.envir,
            self._indptr, self._cols, self._cnt, self.successes, False)
        return ll

    def log_density(self, z):
        return self._evaluate(z, want_grad=False)[0]

    def log_density_and_grad(self, z):
        return self._evaluate(z, want_grad=True)

    def _evaluate(self, z, want_grad):
        z = np.asarray(z, dtype=float)
        J = self.n_journals
        theta = np.ascontiguousarray(z[:J])
        u, v, alpha = z[J], z[J + 1], z[J + 2]
        if not np.all(np.isfinite(z)):
            return -np.inf, np.zeros_like(z)
        mu = expit(u)
        gamma = math.exp(v) if v < 700 else np.inf
        a, b = gamma * mu, gamma * (1.0 - mu)
        if not (a > 0 and b > 0 and np.isfinite(gamma)):
            return -np.inf, np.zeros_like(z)
        ll, g_theta, g_alpha, fb = _institutions_loglik_grad(
            theta, float(alpha), self.envir, self._indptr, self._cols, self._cnt,
            self.successes, want_grad)
        self.fallbacks += fb
        log_pi = log_expit(theta)
        log_1mpi = log_expit(-theta)
        lp = ll
        # Beta prior on pi_j plus the logit Jacobian log pi + log(1 - pi)
        lp += np.sum(a * log_pi + b * log_1mpi) - J * betaln(a, b)
        # Uniform mu with logit Jacobian
        lp += log_expit(u) + log_expit(-u)
        # Gamma hyperprior with log Jacobian
        lp += _LOG_GAMMA_NORM + GAMMA_SHAPE * v - GAMMA_RATE * gamma
        lp += _LOG_ALPHA_NORM - 0.5 * (alpha / ALPHA_SD) ** 2
        if not want_grad:
            return lp, None
        pi = expit(theta)
        grad = np.empty_like(z)
        grad[:J] = g_theta + a * (1.0 - pi) - b * pi
        dab = digamma(a + b)
        ga = np.sum(log_pi) - J * (digamma(a) - dab)
        gb = np.sum(log_1mpi) - J * (digamma(b) - dab)
        dmu = mu * (1.0 - mu)
        grad[J] = (ga - gb) * gamma * dmu + (1.0 - 2.0 * mu)
        grad[J + 1] = ga * a + gb * b + GAMMA_SHAPE - GAMMA_RATE * gamma
        grad[J + 2] = g_alpha - alpha / ALPHA_SD**2
        return lp, grad

    def init_point(self, rng):
        """Overdispersed start: theta ~ N(0, 1), mu ~ U(0.2, 0.8), gamma from
        its prior truncated to (0.1, 10), alpha = 0."""
        prior = stats.gamma(GAMMA_SHAPE, scale=1.0 / GAMMA_RATE)
        lo, hi = prior.cdf(0.1), prior.cdf(10.0)
        gamma = float(prior.ppf(rng.uniform(lo, hi)))
        theta = rng.normal(0.0, 1.0, self.n_journals)
        mu = rng.uniform(0.2, 0.8)
        return np.concatenate([theta, [logit(mu), math.log(gamma), 0.0]])


def posterior_for(counts, profiles, target):
    """Build the posterior for a :class:`CountsMatrix` and its profiles."""
    arrays = align_profiles(profiles, counts)
    target = TargetLevel.parse(target)
    return PoissonBinomialPosterior(counts.counts, arrays.successes(target), arrays.envir)


def log_posterior(state, counts, profiles, target):
    """Log posterior density (unconstrained parameterization) at ``state``."""
    post = posterior_for(counts, profiles, target)
    return post.log_density(post.pack(state))


def grad_log_posterior(state, counts, profiles, target):
    """Gradient over ``(theta, logit mu, log gamma, alpha)`` at ``state``."""
    post = posterior_for(counts, profiles, target)
    return post.log_density_and_grad(post.pack(state))[1]


@dataclass
class ThreeStarDraws:
    draws: np.ndarray  # (S, J)
    negative_fraction: np.ndarray
    flagged: np.ndarray
    median: np.ndarray
    lo50: np.ndarray
    hi50: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray


def _thin_to(draws, size):
    if draws.shape[0] == size:
        return draws
    idx = np.floor(np.arange(size) * draws.shape[0] / size).astype(int)
    return draws[idx]


def derive_three_star(draws4, draws34, flag_threshold=NEGATIVE_THREE_STAR_FLAG):
    """Per-draw 3* probabilities as the difference of the two independent fits.

    Draws are paired in their stored order after thinning the longer stream
    to the shorter length.  Negative differences are kept as they are.
    """
    d4 = np.asarray(draws4, dtype=float)
    d34 = np.asarray(draws34, dtype=float)
    if d4.ndim == 1:
        d4 = d4[:, None]
    if d34.ndim == 1:
        d34 = d34[:, None]
    if d4.shape[1] != d34.shape[1]:
        raise DataError("draw streams cover different numbers of journals")
    size = min(d4.shape[0], d34.shape[0])
    diff = _thin_to(d34, size) - _thin_to(d4, size)
    neg = np.mean(diff < 0, axis=0)
    q = np.quantile(diff, [0.5, 0.25, 0.75, 0.025, 0.975], axis=0)
    return ThreeStarDraws(diff, neg, neg > flag_threshold, *q)
