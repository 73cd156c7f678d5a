"""Expectation-maximization over noncentral multivariate hypergeometric
imputations, with a pseudo-institution regularized logistic M-step.

Each institution is an urn holding ``x_ij`` balls of colour ``j``; its
``y_i`` successes are ``y_i`` balls drawn with colour weights given by the
journal odds.  The E-step imputes per-journal success counts by the urn
mean; the M-step fits ``logit p = mu + alpha z + beta_j`` by IRLS on the
imputed counts plus a pseudo-institution (``z = 1``) that contributes an
even split of successes and failures in every journal.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, gammaln, log_expit, logit

from .data import CountsMatrix, OTHER_JOURNALS, TargetLevel, align_profiles
from .exceptions import ConvergenceWarning, DataError, SupportTooLargeError
from .metrics import dissimilarity, predict

ENUMERATION_LIMIT = 2_000_000
OSCILLATION_WINDOW = 50


@dataclass(frozen=True)
class HypergeometricUrn:
    m: np.ndarray
    omega: np.ndarray
    n: int

    def __post_init__(self):
        m = np.asarray(self.m)
        if m.ndim != 1 or np.any(m < 0) or not np.all(np.equal(np.mod(m, 1), 0)):
            raise ValueError("m must be a vector of non-negative integers")
        omega = np.asarray(self.omega, dtype=float)
        if omega.shape != m.shape:
            raise ValueError("omega and m differ in length")
        if not np.all(omega > 0) or not np.all(np.isfinite(omega)):
            raise ValueError("weights must be positive and finite")
        if not 0 <= self.n <= m.sum():
            raise ValueError(f"n={self.n} outside [0, {int(m.sum())}]")
        object.__setattr__(self, "m", m.astype(np.int64))
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "n", int(self.n))


def support_size(m, n):
    """Number of vectors ``0 <= y <= m`` with ``sum(y) = n``."""
    ways = [1] + [0] * n
    for mj in m:
        new = [0] * (n + 1)
        for s, w in enumerate(ways):
            if w:
                for y in range(min(int(mj), n - s) + 1):
                    new[s + y] += w
        ways = new
    return ways[n]


def _enumerate_support(m, n):
    m = np.asarray(m, dtype=np.int64)
    rest = np.concatenate([np.cumsum(m[::-1])[::-1][1:], [0]])
    parts = np.zeros((1, 0), dtype=np.int64)
    sums = np.zeros(1, dtype=np.int64)
    for j, mj in enumerate(m):
        y = np.arange(mj + 1)
        new_sums = (sums[:, None] + y[None, :]).ravel()
        keep = (new_sums <= n) & (new_sums + rest[j] >= n)
        rows = np.repeat(np.arange(parts.shape[0]), y.size)[keep]
        parts = np.column_stack([parts[rows], np.tile(y, parts.shape[0])[keep]])
        sums = new_sums[keep]
    return parts


def mvh_exact_expectation(urn, limit=ENUMERATION_LIMIT):
    """Exact mean of Fisher's noncentral multivariate hypergeometric
    distribution by enumerating its support in log space.

    Raises
    ------
    SupportTooLargeError
        When the support holds more than ``limit`` vectors.
    """
    m, omega, n = urn.m, urn.omega, urn.n
    size = support_size(m, n)
    if size > limit:
        raise SupportTooLargeError(f"support has {size} points (limit {limit})")
    Y = _enumerate_support(m, n)
    lw = (gammaln(m + 1.0) - gammaln(Y + 1.0) - gammaln(m - Y + 1.0) + Y * np.log(omega)).sum(axis=1)
    w = np.exp(lw - lw.max())
    return (w @ Y) / w.sum()


def mvh_approx_expectation(urn, xtol=1e-12):
    """Approximate mean: ``mu_j = m_j w_j r / (w_j r + 1)`` with ``r > 0``
    solving ``sum_j mu_j = n``; the root is found for ``log r``."""
    m = urn.m.astype(float)
    n = urn.n
    if n == 0:
        return np.zeros_like(m)
    if n == m.sum():
        return m.copy()
    log_w = np.log(urn.omega)
    log_w = log_w - log_w.max()
    f = lambda t: float(np.sum(m * expit(log_w + t))) - n
    # at lo every colour's draw fraction is below n / sum(m), at hi above it
    share = n / m.sum()
    spread = -log_w.min()
    lo = logit(share) - spread - 1.0
    hi = logit(share) + spread + 1.0
    t = brentq(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)
    mu = m * expit(log_w + t)
    return np.minimum(mu * (n / mu.sum()), m)


# ----------------------------------------------------------------------------
# M-step

@dataclass(frozen=True)
class RaschFit:
    mu_hat: float
    alpha_hat: float
    beta_hat: np.ndarray
    reference: int
    converged: bool = True
    n_iter: int = 0
    grad_norm: float = 0.0

    def __post_init__(self):
        beta = np.asarray(self.beta_hat, dtype=float)
        object.__setattr__(self, "beta_hat", beta)
        if not (math.isfinite(self.mu_hat) and math.isfinite(self.alpha_hat)
                and np.all(np.isfinite(beta))):
            raise DataError("non-finite Rasch coefficients")
        if beta[self.reference] != 0.0:
            raise DataError("reference journal effect must be exactly zero")

    @property
    def log_odds(self):
        """Per-journal log odds ``mu + beta_j`` for a real institution."""
        return self.mu_hat + self.beta_hat

    @property
    def pi(self):
        return expit(self.log_odds)


def reference_column(columns):
    """``Other journals`` when present, else the first column."""
    columns = list(columns)
    return columns.index(OTHER_JOURNALS) if OTHER_JOURNALS in columns else 0


def _design(trials, pseudo_strength, reference):
    """Grouped binomial rows: ``[1, z, one-hot beta without reference]``."""
    I, J = trials.shape
    rows, cols = np.nonzero(trials)
    free = [j for j in range(J) if j != reference]
    pos = {j: k + 2 for k, j in enumerate(free)}
    n_data = rows.size
    n_pseudo = J if pseudo_strength > 0 else 0
    A = np.zeros((n_data + n_pseudo, J + 1))
    A[:, 0] = 1.0
    for r, j in enumerate(cols):
        if j != reference:
            A[r, pos[j]] = 1.0
    if n_pseudo:
        A[n_data:, 1] = 1.0
        for j in range(J):
            if j != reference:
                A[n_data + j, pos[j]] = 1.0
    return A, rows, cols, free


def _binomial_loglik(eta, s, f):
    return float(np.sum(s * log_expit(eta) + f * log_expit(-eta)))


def fit_rasch(imputed, trials, pseudo_strength=1.0, reference=None, tol=1e-8,
              max_iter=100, start=None):
    """Fit ``logit p_ij = mu + alpha z_i + beta_j`` to fractional successes.

    Parameters
    ----------
    imputed : array_like, shape (I, J)
        Imputed successes with ``0 <= imputed <= trials``.
    trials : array_like or CountsMatrix, shape (I, J)
    pseudo_strength : float
        Pseudo-articles per journal for the extra institution (half succeed);
        zero disables the pseudo-institution and fixes ``alpha`` at 0.
    reference : int, optional
        Column whose ``beta`` is pinned to zero.
    tol : float
        Stop when the score vector's Euclidean norm falls below ``tol``.

    Returns
    -------
    RaschFit
    """
    if isinstance(trials, CountsMatrix):
        if reference is None:
            reference = reference_column(trials.columns)
        trials = trials.counts
    T = np.asarray(trials, dtype=float)
    S = np.asarray(imputed, dtype=float)
    if S.shape != T.shape:
        raise DataError(f"imputed shape {S.shape} differs from trials {T.shape}")
    if np.any(S < -1e-9) or np.any(S > T + 1e-9):
        raise DataError("imputed successes must satisfy 0 <= s <= trials")
    if pseudo_strength < 0:
        raise ValueError("pseudo_strength must be non-negative")
    S = np.clip(S, 0.0, T)
    reference = 0 if reference is None else int(reference)
    J = T.shape[1]
    A, rows, cols, free = _design(T, pseudo_strength, reference)
    s = np.concatenate([S[rows, cols], np.full(A.shape[0] - rows.size, 0.5 * pseudo_strength)])
    f = np.concatenate([T[rows, cols] - S[rows, cols],
                        np.full(A.shape[0] - rows.size, 0.5 * pseudo_strength)])
    if pseudo_strength == 0:
        A = np.delete(A, 1, axis=1)
    n = s + f
    coef = np.zeros(A.shape[1]) if start is None else np.asarray(start, dtype=float).copy()
    eta = A @ coef
    ll = _binomial_loglik(eta, s, f)
    grad_norm = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(eta)
        score = A.T @ (s - n * p)
        grad_norm = float(np.linalg.norm(score))
        if grad_norm < tol:
            converged = True
            it -= 1
            break
        W = n * p * (1.0 - p)
        H = A.T @ (A * W[:, None])
        step = np.linalg.lstsq(H, score, rcond=None)[0]
        # step halving keeps the log-likelihood non-decreasing
        for _ in range(60):
            cand = coef + step
            eta_c = A @ cand
            ll_c = _binomial_loglik(eta_c, s, f)
            if ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            step *= 0.5
        coef, eta, ll = cand, eta_c, ll_c
    else:
        p = expit(eta)
        grad_norm = float(np.linalg.norm(A.T @ (s - n * p)))
        converged = grad_norm < tol
    if not converged:
        warnings.warn(f"IRLS stopped after {max_iter} iterations with score norm {grad_norm:.3g}",
                      ConvergenceWarning, stacklevel=2)
    if pseudo_strength == 0:
        coef = np.insert(coef, 1, 0.0)
    beta = np.zeros(J)
    beta[free] = coef[2:]
    return RaschFit(float(coef[0]), float(coef[1]), beta, reference, converged, it, grad_norm)


# ----------------------------------------------------------------------------
# EM loop

@dataclass(frozen=True)
class EmConfig:
    pseudo_strength: float = 1.0
    tol: float = 1e-6
    max_iters: int = 500
    init_seed: int = 0

    def __post_init__(self):
        if not self.pseudo_strength > 0:
            raise ValueError("pseudo_strength must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class EmResult:
    fit: RaschFit
    imputed: np.ndarray
    n_iter: int
    converged: bool
    oscillating: bool
    history: list = field(repr=False)

    @property
    def pi(self):
        return self.fit.pi

    @property
    def log_odds(self):
        return self.fit.log_odds


def impute(trials, successes, log_odds):
    """E-step: urn means per institution.  ``log_odds`` is (J,) or (I, J)."""
    X = np.asarray(trials)
    y = np.asarray(successes)
    L = np.broadcast_to(np.asarray(log_odds, dtype=float), X.shape)
    out = np.zeros(X.shape, dtype=float)
    for i in range(X.shape[0]):
        present = np.flatnonzero(X[i])
        if present.size == 0:
            continue
        lw = L[i, present]
        urn = HypergeometricUrn(X[i, present], np.exp(lw - lw.max()), int(y[i]))
        out[i, present] = mvh_approx_expectation(urn)
    return out


def em_run(counts, successes, config=None, reference=None):
    """Alternate urn-mean imputation and the regularized logistic fit.

    Parameters
    ----------
    counts : CountsMatrix or array_like, shape (I, J)
    successes : array_like, shape (I,)
    config : EmConfig, optional

    Returns
    -------
    EmResult
        ``converged`` is False when ``max_iters`` is reached or when the
        largest coefficient change has not reached a new minimum in 50
        iterations (reported as oscillation); both raise a warning.
    """
    config = config or EmConfig()
    if isinstance(counts, CountsMatrix):
        if reference is None:
            reference = reference_column(counts.columns)
        X = counts.counts
    else:
        X = np.asarray(counts)
    reference = 0 if reference is None else int(reference)
    y = np.asarray(successes, dtype=np.int64)
    totals = X.sum(axis=1)
    if y.shape != totals.shape or np.any(y < 0) or np.any(y > totals):
        raise DataError("successes must lie in [0, N_i] for every institution")
    rng = np.random.default_rng(config.init_seed)
    # one logit-normal(0, 1) probability per institution-journal cell
    log_odds = rng.normal(0.0, 1.0, X.shape)
    fit = None
    beta_prev = None
    history = []
    best, since_best = np.inf, 0
    converged = oscillating = False
    it = 0
    for it in range(1, config.max_iters + 1):
        imputed = impute(X, y, log_odds)
        start = None if fit is None else np.array(
            [fit.mu_hat, fit.alpha_hat] + [b for j, b in enumerate(fit.beta_hat) if j != reference])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            fit = fit_rasch(imputed, X, config.pseudo_strength, reference, start=start)
        log_odds = fit.log_odds
        if beta_prev is not None:
            move = float(np.max(np.abs(fit.beta_hat - beta_prev))) if fit.beta_hat.size else 0.0
            history.append(move)
            if move < config.tol:
                converged = True
                break
            if move < best:
                best, since_best = move, 0
            else:
                since_best += 1
                if since_best >= OSCILLATION_WINDOW:
                    oscillating = True
                    break
        beta_prev = fit.beta_hat
    if not converged:
        why = "oscillation (no new minimum movement in 50 iterations)" if oscillating \
            else f"{config.max_iters} iterations"
        last = history[-1] if history else float("nan")
        warnings.warn(f"EM stopped after {why}; last max |dbeta| = {last:.3g}",
                      ConvergenceWarning, stacklevel=2)
    return EmResult(fit, imputed, it, converged, oscillating, history)


def em_fit(counts, profiles, target, config=None):
    """:func:`em_run` on aligned profiles for one target level."""
    arrays = align_profiles(profiles, counts)
    return em_run(counts, arrays.successes(TargetLevel.parse(target)), config)


# ----------------------------------------------------------------------------
# Cross-validation

@dataclass(frozen=True)
class CvConfig:
    folds: int = 10
    grid: tuple = (0.25, 0.5, 1.0, 2.0, 4.0)
    seed: int = 0

    def __post_init__(self):
        if int(self.folds) < 2:
            raise ValueError("folds must be at least 2")
        grid = tuple(float(g) for g in self.grid)
        if not grid:
            raise ValueError("grid must be non-empty")
        if any(not g > 0 for g in grid):
            raise ValueError("grid values must be positive")
        object.__setattr__(self, "grid", grid)


@dataclass
class CvResult:
    best: float
    mean_delta: dict
    table: list  # rows (pseudo_strength, fold, delta)
    folds: np.ndarray  # fold index per institution
    unseen: list  # rows (pseudo_strength, fold, number of unseen journals)


def fold_assignment(n_institutions, folds, seed):
    """Simple random folds of near-equal size."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    out = np.empty(n_institutions, dtype=np.int64)
    out[rng.permutation(n_institutions)] = np.arange(n_institutions) % folds
    return out


def _task_seed(seed, g, k, level):
    ss = np.random.SeedSequence([int(seed), 1, g, k, level])
    return int(ss.generate_state(1, np.uint64)[0])


def cross_validate(counts, profiles, cv=None, em_config=None):
    """Choose the pseudo-data strength by K-fold cross-validated dissimilarity.

    Both target levels are fitted on each training split (the index needs
    4* and 3* predictions).  Journals with no training articles are
    predicted with the reference column's probability and counted.

    Returns
    -------
    CvResult
        ``best`` is the grid value with the smallest mean held-out index
        (first one on ties).
    """
    cv = cv or CvConfig()
    base = em_config or EmConfig()
    arrays = align_profiles(profiles, counts)
    I = len(counts.institutions)
    if I < cv.folds:
        raise DataError(f"{I} institutions cannot fill {cv.folds} folds")
    ref = reference_column(counts.columns)
    assign = fold_assignment(I, cv.folds, cv.seed)
    table, unseen, mean_delta = [], [], {}
    for g, strength in enumerate(cv.grid):
        deltas = []
        for k in range(cv.folds):
            train = np.flatnonzero(assign != k)
            test = np.flatnonzero(assign == k)
            Xtr = counts.counts[train]
            seen = Xtr.sum(axis=0) > 0
            pis = []
            for level, target in enumerate((TargetLevel.FOUR_STAR, TargetLevel.THREE_PLUS)):
                cfg = EmConfig(strength, base.tol, base.max_iters, _task_seed(cv.seed, g, k, level))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", ConvergenceWarning)
                    res = em_run(Xtr, arrays.successes(target)[train], cfg, reference=ref)
                pi = res.pi.copy()
                pi[~seen] = pi[ref]
                pis.append(pi)
            Xte = counts.counts[test]
            n_unseen = int(np.sum((~seen) & (Xte.sum(axis=0) > 0)))
            pred = predict(Xte, pis[0], pis[1])
            d = dissimilarity(arrays.subset(test), pred)
            deltas.append(d)
            table.append((strength, k, d))
            unseen.append((strength, k, n_unseen))
        mean_delta[strength] = float(np.mean(deltas))
    best = min(cv.grid, key=lambda s: (mean_delta[s], cv.grid.index(s)))
    return CvResult(best, mean_delta, table, assign, unseen)
