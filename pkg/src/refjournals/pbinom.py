"""Poisson-binomial distribution computed on the log scale.

The distribution of the number of successes among independent Bernoulli
trials with unequal success probabilities.  The production path is an
O(n^2) convolution in log space; :func:`log_pmf_shah` is a slower
recursion kept as an independent cross-check.
"""
import math

import gmpy2
import numpy as np
from numba import njit
from scipy.special import logsumexp

from .exceptions import DegenerateInputError, UnsupportedInputError

__all__ = [
    "log_pmf_dp",
    "log_pmf_shah",
    "shah_log_table",
    "moments",
    "grad_log_pmf",
    "leave_one_out",
]

_DBL_EPS = np.finfo(float).eps
# a leave-one-out entry is trusted only if its relative error bound is below this
LOO_TOL = 1e-8


def _check_probs(probs, open_interval=False):
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probs must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(p)):
        raise ValueError("probs contains NaN or infinite values")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probs must lie in [0, 1]")
    if open_interval and (np.any(p == 0) or np.any(p == 1)):
        raise DegenerateInputError("probs must lie strictly inside (0, 1)")
    return p


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _logaddexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True, nogil=True)
def _log_sigmoid(x):
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@njit(cache=True, nogil=True)
def _dp_grouped(log_p, log_q, counts):
    """Log PMF table for groups of identical trials (group g repeated counts[g] times)."""
    n = 0
    for g in range(counts.shape[0]):
        n += counts[g]
    out = np.full(n + 1, -np.inf)
    out[0] = 0.0
    t = 0
    for g in range(counts.shape[0]):
        lp = log_p[g]
        lq = log_q[g]
        for _ in range(counts[g]):
            out[t + 1] = out[t] + lp
            for k in range(t, 0, -1):
                out[k] = _logaddexp(out[k] + lq, out[k - 1] + lp)
            out[0] = out[0] + lq
            t += 1
    return out


@njit(cache=True, nogil=True)
def _propagate(prev, c, eps0):
    # relative error of (P(k) - c P(k)) / (1 - c) given the error carried in c
    if prev == np.inf:
        return np.inf
    return (eps0 + c * (prev + eps0)) / (1.0 - c) + eps0


@njit(cache=True, nogil=True)
def _deconvolve(table, lp, lq, eps0):
    """Remove one trial (log p = lp, log(1-p) = lq) from a log PMF table.

    With c_k = p P_(k-1) / P(k) the forward step amplifies carried error by
    c_k / (1 - c_k) and the backward step by (1 - c_k) / c_k.  c_k increases
    in k, so the forward recursion runs while c_k <= 1/2 and the backward
    recursion fills the rest.  Returns the table and per-entry relative
    error bounds.
    """
    n = table.shape[0] - 1
    out = np.empty(n)
    err = np.empty(n)
    # forward: P_(k) = (P(k) - p P_(k-1)) / q
    out[0] = table[0] - lq
    err[0] = eps0
    split = n
    for k in range(1, n):
        s = lp + out[k - 1] - table[k]
        if table[k] == -np.inf or s > -0.6931471805599453:
            split = k
            break
        c = math.exp(s)
        out[k] = table[k] + math.log1p(-c) - lq
        err[k] = _propagate(err[k - 1], c, eps0)
    if split == n:
        return out, err
    # backward: P_(k-1) = (P(k) - q P_(k)) / p
    out[n - 1] = table[n] - lp
    err[n - 1] = eps0
    for k in range(n - 1, split, -1):
        s = lq + out[k] - table[k]
        if table[k] == -np.inf or s >= 0.0:
            out[k - 1] = -np.inf
            err[k - 1] = np.inf
        else:
            c = math.exp(s)
            out[k - 1] = table[k] + math.log1p(-c) - lp
            err[k - 1] = _propagate(err[k], c, eps0)
    return out, err


@njit(cache=True, nogil=True)
def _log_norm_error(table):
    m = -np.inf
    for k in range(table.shape[0]):
        if table[k] > m:
            m = table[k]
    if m == -np.inf:
        return np.inf
    s = 0.0
    for k in range(table.shape[0]):
        s += math.exp(table[k] - m)
    return abs(m + math.log(s))


@njit(cache=True, nogil=True)
def _loo_table(log_p, log_q, counts, table, g, k):
    """Leave-one-out table for one trial of group g, with recomputation fallback.

    Deconvolution is kept when the table normalizes to within LOO_TOL and
    the error bound on entry k (the one the caller reads) is below LOO_TOL.
    Returns the table and 1 if the fallback was used, else 0.
    """
    n = table.shape[0] - 1
    eps0 = 4.0 * (n + 1) * 2.220446049250313e-16
    loo, err = _deconvolve(table, log_p[g], log_q[g], eps0)
    if err[k] <= LOO_TOL and _log_norm_error(loo) <= LOO_TOL:
        return loo, 0
    reduced = counts.copy()
    reduced[g] -= 1
    return _dp_grouped(log_p, log_q, reduced), 1


@njit(cache=True, nogil=True)
def _grouped_loglik_grad(log_p, log_q, counts, y, want_grad):
    """log Pr(K = y) for grouped trials and its gradient per group.

    The gradient entry for group g is d log Pr(K=y) / d logit(p_g) summed
    over the counts[g] trials sharing that probability.
    """
    table = _dp_grouped(log_p, log_q, counts)
    n = table.shape[0] - 1
    ll = table[y]
    G = counts.shape[0]
    grad = np.zeros(G)
    fallbacks = 0
    if not want_grad:
        return ll, grad, fallbacks
    for g in range(G):
        if counts[g] == 0:
            continue
        p = math.exp(log_p[g])
        if y == 0:
            a = 0.0
        elif y == n:
            a = 1.0
        else:
            loo, fb = _loo_table(log_p, log_q, counts, table, g, y - 1)
            fallbacks += fb
            # posterior probability that a given trial in group g succeeded
            a = math.exp(log_p[g] + loo[y - 1] - ll)
        grad[g] = counts[g] * (a - p)
    return ll, grad, fallbacks


@njit(cache=True, nogil=True)
def _institutions_loglik_grad(theta, alpha, envir, indptr, cols, cnt, y, want_grad):
    """Sum of per-institution Poisson-binomial log-likelihoods.

    Institution i has trials in columns cols[indptr[i]:indptr[i+1]] with
    multiplicities cnt[...]; trial log-odds are theta[col] + alpha * envir[i].
    """
    J = theta.shape[0]
    total = 0.0
    g_theta = np.zeros(J)
    g_alpha = 0.0
    fallbacks = 0
    for i in range(indptr.shape[0] - 1):
        lo = indptr[i]
        hi = indptr[i + 1]
        G = hi - lo
        lp = np.empty(G)
        lq = np.empty(G)
        c = np.empty(G, dtype=np.int64)
        for t in range(G):
            eta = theta[cols[lo + t]] + alpha * envir[i]
            lp[t] = _log_sigmoid(eta)
            lq[t] = _log_sigmoid(-eta)
            c[t] = cnt[lo + t]
        ll, gr, fb = _grouped_loglik_grad(lp, lq, c, y[i], want_grad)
        total += ll
        fallbacks += fb
        if want_grad:
            for t in range(G):
                g_theta[cols[lo + t]] += gr[t]
                g_alpha += gr[t] * envir[i]
    return total, g_theta, g_alpha, fallbacks


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def log_pmf_dp(probs):
    """Log probability mass function of a Poisson-binomial variable.

    Parameters
    ----------
    probs : array_like of float
        Success probability of each trial, in [0, 1].

    Returns
    -------
    ndarray of shape (n + 1,)
        ``log Pr(K = k)`` for ``k = 0..n``.  Impossible counts are ``-inf``.

    Notes
    -----
    Trials with probability exactly 0 or 1 are conditioned out and the
    support is shifted, so boundary values never enter the log-space
    arithmetic.  Probabilities are sorted first, which makes the result
    bitwise invariant to the order of ``probs``.
    """
    p = np.sort(_check_probs(probs))
    n = p.size
    sure = int(np.count_nonzero(p == 1.0))
    inner = p[(p > 0.0) & (p < 1.0)]
    out = np.full(n + 1, -np.inf)
    if inner.size == 0:
        out[sure] = 0.0
        return out
    counts = np.ones(inner.size, dtype=np.int64)
    table = _dp_grouped(np.log(inner), np.log1p(-inner), counts)
    out[sure : sure + inner.size + 1] = table
    return out


def moments(probs):
    """Mean and variance of a Poisson-binomial variable."""
    p = _check_probs(probs)
    return float(p.sum()), float(np.sum(p * (1.0 - p)))


def leave_one_out(log_table, prob):
    """Remove one trial with success probability ``prob`` from a log PMF table.

    Uses forward/backward deconvolution and returns ``(table, err)`` where
    ``err`` is the propagated relative-error bound of each entry.  Callers
    that need guaranteed precision should recompute when the bound is large;
    :func:`grad_log_pmf` does this automatically.
    """
    table = np.asarray(log_table, dtype=float)
    if not 0.0 < prob < 1.0:
        raise DegenerateInputError("prob must lie strictly inside (0, 1)")
    n = table.size - 1
    eps0 = 4.0 * (n + 1) * _DBL_EPS
    return _deconvolve(table, math.log(prob), math.log1p(-prob), eps0)


def grad_log_pmf(probs, k):
    """Gradient of ``log Pr(K = k)`` with respect to each trial's log-odds.

    Trials with equal probabilities share one leave-one-out computation, so
    their gradient components are exactly equal.
    """
    p = _check_probs(probs, open_interval=True)
    n = p.size
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside [0, {n}]")
    uniq, inverse, counts = np.unique(p, return_inverse=True, return_counts=True)
    _, grad, _ = _grouped_loglik_grad(
        np.log(uniq), np.log1p(-uniq), counts.astype(np.int64), int(k), True
    )
    return grad[inverse] / counts[inverse]


# ---------------------------------------------------------------------------
# Shah recursion (cross-check oracle)
# ---------------------------------------------------------------------------

# decimal digits that may be lost to cancellation before leaving float64
_FLOAT_DIGIT_BUDGET = 5.0
_GUARD_BITS = 64


def _shah_float(log_odds, log_p0, kmax):
    """Shah recursion in float64 with log magnitudes and explicit signs.

    Returns the table and the worst number of decimal digits lost to
    cancellation across all steps.
    """
    j = np.arange(1, kmax + 1)[:, None]
    log_s = logsumexp(j * log_odds[None, :], axis=1)  # log S_j, all positive
    table = np.full(kmax + 1, -np.inf)
    table[0] = log_p0
    lost = 0.0
    for k in range(1, kmax + 1):
        terms = table[k - 1 :: -1][:k] + log_s[:k]  # term for j = 1..k
        pos = logsumexp(terms[0::2])
        neg = logsumexp(terms[1::2]) if k >= 2 else -np.inf
        if neg >= pos:
            return table, np.inf
        val = pos + math.log1p(-math.exp(neg - pos))
        lost = max(lost, (pos - val) / math.log(10.0))
        table[k] = val - math.log(k)
    return table, lost


def _shah_bits(log_odds, log_p0, kmax):
    """A priori working precision for the extended-precision recursion.

    Every term is at most S_j (probabilities are <= 1) while Pr(K=k) is at
    least the mass of the single most likely k-subset, which bounds the
    cancellation at each step.
    """
    j = np.arange(1, kmax + 1)[:, None]
    log_s = np.maximum.accumulate(logsumexp(j * log_odds[None, :], axis=1))
    lower = log_p0 + np.cumsum(np.sort(log_odds)[::-1][:kmax])
    spread = float(np.max(log_s - lower, initial=0.0))
    return int(spread / math.log(2.0) + math.log2(kmax + 1)) + _GUARD_BITS


def _shah_mpfr(probs, kmax, bits):
    with gmpy2.context(gmpy2.get_context(), precision=bits):
        one = gmpy2.mpfr(1)
        ps = [gmpy2.mpfr(float(x)) for x in probs]
        odds = [x / (one - x) for x in ps]
        pr = [one]
        for x in ps:
            pr[0] *= one - x
        signed = []
        powers = list(odds)
        for j in range(kmax):
            s = gmpy2.fsum(powers)
            signed.append(s if j % 2 == 0 else -s)
            powers = [a * b for a, b in zip(powers, odds)]
        for k in range(1, kmax + 1):
            acc = gmpy2.mpfr(0)
            for a, b in zip(reversed(pr), signed):
                acc += a * b
            pr.append(acc / k)
        return np.array([float(gmpy2.log(v)) if v > 0 else -np.inf for v in pr])


def shah_log_table(probs, kmax=None):
    """Log PMF for ``k = 0..kmax`` by Shah's recursion.

    Cancellation in the alternating sum is measured as the recursion runs in
    float64.  If more than a few digits are lost the table is recomputed in
    multiple precision, at a working precision bounded a priori, and accepted
    only once a run with extra bits agrees to 1e-12.
    """
    p = _check_probs(probs)
    n = p.size
    if np.any(p == 1.0):
        raise UnsupportedInputError(
            "Shah recursion divides by 1 - p; condition on sure trials first"
        )
    kmax = n if kmax is None else int(kmax)
    if not 0 <= kmax <= n:
        raise ValueError(f"kmax={kmax} outside [0, {n}]")
    inner = p[p > 0.0]
    out = np.full(kmax + 1, -np.inf)
    if inner.size == 0:
        out[0] = 0.0
        return out
    m = min(kmax, inner.size)
    log_p0 = float(np.sum(np.log1p(-inner)))
    log_odds = np.log(inner) - np.log1p(-inner)
    table, lost = _shah_float(log_odds, log_p0, m)
    if lost > _FLOAT_DIGIT_BUDGET:
        bits = _shah_bits(log_odds, log_p0, m)
        table = _shah_mpfr(inner, m, bits)
        while True:
            bits += max(64, bits // 16)
            check = _shah_mpfr(inner, m, bits)
            same_support = np.array_equal(np.isfinite(check), np.isfinite(table))
            finite = np.isfinite(check)
            if same_support and np.all(np.abs(check[finite] - table[finite]) < 1e-12):
                break
            table = check
    out[: m + 1] = table
    return out


def log_pmf_shah(probs, k):
    """``log Pr(K = k)`` by Shah's recursion; see :func:`shah_log_table`."""
    p = _check_probs(probs)
    if not 0 <= k <= p.size:
        raise ValueError(f"k={k} outside [0, {p.size}]")
    return float(shah_log_table(p, kmax=k)[k])
