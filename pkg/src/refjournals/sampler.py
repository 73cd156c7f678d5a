"""No-U-turn Hamiltonian Monte Carlo with warmup adaptation and diagnostics.

The transition is multinomial NUTS: trajectories double in a random
direction until a generalized no-U-turn check fails (including the two
extra checks across the seam of every merge), the tree depth limit is hit,
or the energy error diverges.  Step size is tuned by dual averaging and a
diagonal inverse metric is estimated from the second half of warmup.

Diagnostics are the rank-normalized split-Rhat (maximum of the bulk and
folded versions) and bulk effective sample size.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .exceptions import InitializationError, InsufficientDrawsError

MAX_DELTA_H = 1000.0
INIT_ATTEMPTS = 100
UNRELIABLE_DIVERGENCE_RATE = 0.01
MIN_CHAINS = 2
MIN_ITERS = 100


@dataclass(frozen=True)
class ChainConfig:
    """Run-length and adaptation settings shared by every chain."""

    chains: int = 4
    warmup_iters: int = 1000
    sample_iters: int = 1000
    seed: int = 0
    target_accept: float = 0.8
    max_leapfrog_depth: int = 10
    n_jobs: int = 1

    def __post_init__(self):
        for name in ("chains", "sample_iters", "max_leapfrog_depth", "n_jobs"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if int(self.warmup_iters) < 0:
            raise ValueError("warmup_iters must be non-negative")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class PosteriorDraws:
    """Post-warmup draws indexed ``(chain, iteration, parameter)``."""

    names: list
    draws: np.ndarray
    accept_stat: np.ndarray
    divergent: np.ndarray
    n_leapfrog: np.ndarray
    tree_depth: np.ndarray
    log_density: np.ndarray
    step_size: np.ndarray
    inv_metric: np.ndarray
    unconstrained: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.names = list(self.names)
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.names):
            raise ValueError(f"draws shape {self.draws.shape} does not match {len(self.names)} names")
        if np.isnan(self.draws).any():
            raise ValueError("draws contain NaN")

    @property
    def n_chains(self):
        return self.draws.shape[0]

    @property
    def n_iters(self):
        return self.draws.shape[1]

    @property
    def n_divergent(self):
        return int(np.sum(self.divergent))

    @property
    def divergence_rate(self):
        return self.n_divergent / self.divergent.size

    @property
    def unreliable(self):
        return self.divergence_rate > UNRELIABLE_DIVERGENCE_RATE

    def param(self, name):
        """Draws of one parameter, shape (chains, iterations)."""
        return self.draws[:, :, self.names.index(name)]

    def flat(self, name=None):
        """Chain-major flattened draws, shape (chains * iterations[, params])."""
        if name is None:
            return self.draws.reshape(-1, self.draws.shape[2])
        return self.param(name).reshape(-1)


# ----------------------------------------------------------------------------
# Step-size adaptation

class DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(1.0)

    def restart(self, step_size):
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat):
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    @property
    def final(self):
        return math.exp(self.x_bar)


class WelfordVariance:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def regularized(self):
        """Sample variance shrunk toward 1e-3 (the usual small-sample guard)."""
        if self.n < 2:
            return np.ones_like(self.mean)
        var = self.m2 / (self.n - 1)
        return (self.n / (self.n + 5.0)) * var + 1e-3 * (5.0 / (self.n + 5.0))


def warmup_schedule(warmup_iters):
    """Return ``(metric_start, metric_end)`` warmup iteration indices.

    Iterations before ``metric_start`` adapt step size under the current
    metric; ``[metric_start, metric_end)`` also accumulate variances; the
    metric is replaced at ``metric_end`` and the rest adapt step size only.
    """
    start = warmup_iters // 2
    end = start + int(0.8 * (warmup_iters - start))
    return start, end


# ----------------------------------------------------------------------------
# Hamiltonian dynamics

class _Point:
    __slots__ = ("q", "p", "lp", "grad")

    def __init__(self, q, p, lp, grad):
        self.q = q
        self.p = p
        self.lp = lp
        self.grad = grad


def leapfrog(fn, q, p, grad, step, inv_metric):
    """One leapfrog step; returns ``(q, p, log_density, grad)``."""
    p = p + 0.5 * step * grad
    q = q + step * inv_metric * p
    lp, grad = fn(q)
    if not np.isfinite(lp):
        return q, p, -np.inf, grad
    p = p + 0.5 * step * grad
    return q, p, lp, grad


def _kinetic(p, inv_metric):
    return 0.5 * float(np.dot(p, inv_metric * p))


def _no_u_turn(ps_beg, ps_end, rho):
    return float(np.dot(ps_beg, rho)) > 0.0 and float(np.dot(ps_end, rho)) > 0.0


@dataclass
class _Subtree:
    end: _Point
    sample: _Point
    p_beg: np.ndarray
    p_end: np.ndarray
    rho: np.ndarray
    log_weight: float
    valid: bool


class _Transition:
    """State for a single NUTS transition (counters shared by the recursion)."""

    def __init__(self, fn, step, inv_metric, max_depth, rng):
        self.fn = fn
        self.step = step
        self.inv_metric = inv_metric
        self.max_depth = max_depth
        self.rng = rng
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False

    def _leaf(self, point, direction, h0):
        q, p, lp, grad = leapfrog(self.fn, point.q, point.p, point.grad,
                                  direction * self.step, self.inv_metric)
        self.n_leapfrog += 1
        h = -lp + _kinetic(p, self.inv_metric) if np.isfinite(lp) else np.inf
        if not np.isfinite(h):
            h = np.inf
        new = _Point(q, p, lp, grad)
        if h - h0 > MAX_DELTA_H:
            self.divergent = True
            self.sum_metro += 0.0
            return _Subtree(new, new, p, p, p.copy(), -np.inf, False)
        log_w = h0 - h
        self.sum_metro += 1.0 if log_w > 0 else math.exp(log_w)
        return _Subtree(new, new, p, p, p.copy(), log_w, True)

    def build(self, point, direction, depth, h0):
        if depth == 0:
            return self._leaf(point, direction, h0)
        init = self.build(point, direction, depth - 1, h0)
        if not init.valid:
            return init
        final = self.build(init.end, direction, depth - 1, h0)
        if not final.valid:
            return final
        log_w = np.logaddexp(init.log_weight, final.log_weight)
        sample = init.sample
        if final.log_weight > log_w or self.rng.uniform() < math.exp(final.log_weight - log_w):
            sample = final.sample
        rho = init.rho + final.rho
        m = self.inv_metric
        valid = (_no_u_turn(m * init.p_beg, m * final.p_end, rho)
                 and _no_u_turn(m * init.p_beg, m * final.p_beg, init.rho + final.p_beg)
                 and _no_u_turn(m * init.p_end, m * final.p_end, final.rho + init.p_end))
        return _Subtree(final.end, sample, init.p_beg, final.p_end, rho, log_w, valid)

    def run(self, start):
        """Return ``(new point, accept_stat, depth)`` from ``start``."""
        m = self.inv_metric
        p0 = self.rng.standard_normal(start.q.size) / np.sqrt(m)
        point = _Point(start.q, p0, start.lp, start.grad)
        h0 = -point.lp + _kinetic(p0, m)
        # ends[0] is the backward end, ends[1] the forward end
        ends = [point, point]
        p_ends = [p0, p0]
        rho = p0.copy()
        log_w = 0.0
        sample = point
        depth = 0
        while depth < self.max_depth:
            forward = self.rng.uniform() > 0.5
            k = 1 if forward else 0
            sub = self.build(ends[k], 1.0 if forward else -1.0, depth, h0)
            if not sub.valid:
                break
            depth += 1
            ends[k] = sub.end
            if sub.log_weight > log_w or self.rng.uniform() < math.exp(sub.log_weight - log_w):
                sample = sub.sample
            log_w = np.logaddexp(log_w, sub.log_weight)
            near, far = p_ends[k], p_ends[1 - k]
            old_rho = rho
            rho = old_rho + sub.rho
            p_ends[k] = sub.p_end
            if not (_no_u_turn(m * far, m * sub.p_end, rho)
                    and _no_u_turn(m * far, m * sub.p_beg, old_rho + sub.p_beg)
                    and _no_u_turn(m * near, m * sub.p_end, sub.rho + near)):
                break
        accept = self.sum_metro / self.n_leapfrog if self.n_leapfrog else 0.0
        return _Point(sample.q, None, sample.lp, sample.grad), accept, depth


def nuts_step(fn, point, step, inv_metric, max_depth, rng):
    """One NUTS transition.  Returns ``(point, accept, depth, n_leapfrog, divergent)``."""
    t = _Transition(fn, step, inv_metric, max_depth, rng)
    new, accept, depth = t.run(point)
    return new, accept, depth, t.n_leapfrog, t.divergent


def find_reasonable_step(fn, point, step, inv_metric, rng):
    """Double or halve ``step`` until one leapfrog step crosses acceptance 0.8."""
    log_target = math.log(0.8)
    direction = 0
    for _ in range(200):
        p = rng.standard_normal(point.q.size) / np.sqrt(inv_metric)
        h0 = -point.lp + _kinetic(p, inv_metric)
        _, p1, lp1, _ = leapfrog(fn, point.q, p, point.grad, step, inv_metric)
        h = -lp1 + _kinetic(p1, inv_metric) if np.isfinite(lp1) else np.inf
        delta = h0 - h if np.isfinite(h) else -np.inf
        if direction == 0:
            direction = 1 if delta > log_target else -1
        if direction == 1 and not delta > log_target:
            break
        if direction == -1 and not delta < log_target:
            break
        step = step * 2.0 if direction == 1 else step * 0.5
        if step > 1e7 or step < 1e-300:
            raise InitializationError(f"step size search diverged (step={step:g})")
    return step


# ----------------------------------------------------------------------------
# Chains

def _initial_point(fn, init, rng):
    base = None if callable(init) else np.asarray(init, dtype=float)
    for attempt in range(INIT_ATTEMPTS):
        if base is None:
            q = np.asarray(init(rng), dtype=float)
        elif attempt == 0:
            q = base.copy()
        else:
            q = base + rng.uniform(-1.0, 1.0, base.size)
        lp, grad = fn(q)
        if np.isfinite(lp) and np.all(np.isfinite(grad)):
            return _Point(q, None, float(lp), np.asarray(grad, dtype=float))
    raise InitializationError(
        f"no finite log density after {INIT_ATTEMPTS} jittered initialization attempts")


def _run_chain(fn, init, config, rng):
    point = _initial_point(fn, init, rng)
    dim = point.q.size
    inv_metric = np.ones(dim)
    step = find_reasonable_step(fn, point, 1.0, inv_metric, rng)
    adapt = DualAveraging(config.target_accept)
    adapt.restart(step)
    m_start, m_end = warmup_schedule(config.warmup_iters)
    welford = WelfordVariance(dim)
    for it in range(config.warmup_iters):
        point, accept, _, _, _ = nuts_step(fn, point, step, inv_metric,
                                           config.max_leapfrog_depth, rng)
        step = adapt.update(accept)
        if m_start <= it < m_end:
            welford.add(point.q)
        if it == m_end - 1 and welford.n >= 2:
            inv_metric = welford.regularized()
            step = find_reasonable_step(fn, point, step, inv_metric, rng)
            adapt.restart(step)
    if config.warmup_iters:
        step = adapt.final

    n = config.sample_iters
    out = {
        "q": np.empty((n, dim)),
        "accept": np.empty(n),
        "divergent": np.zeros(n, dtype=bool),
        "n_leapfrog": np.empty(n, dtype=np.int64),
        "depth": np.empty(n, dtype=np.int64),
        "lp": np.empty(n),
    }
    for it in range(n):
        point, accept, depth, n_leap, div = nuts_step(fn, point, step, inv_metric,
                                                      config.max_leapfrog_depth, rng)
        out["q"][it] = point.q
        out["accept"][it] = accept
        out["divergent"][it] = div
        out["n_leapfrog"][it] = n_leap
        out["depth"][it] = depth
        out["lp"][it] = point.lp
    out["step"] = step
    out["inv_metric"] = inv_metric
    return out


def chain_generators(seed, chains):
    """Independent generators, one per chain, spawned from a single seed."""
    return [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(int(seed)).spawn(chains)]


def run_chains(fn, init, config=None, names=None, transform=None):
    """Sample from a differentiable log density with multiple NUTS chains.

    Parameters
    ----------
    fn : callable
        ``fn(q) -> (log_density, gradient)`` on the unconstrained space.
    init : callable or array_like
        ``init(rng) -> q`` draws a start point; a fixed vector is jittered
        by ``U(-1, 1)`` after the first failed attempt.
    config : ChainConfig, optional
    names : list of str, optional
        Names of the stored parameters (after ``transform``).
    transform : callable, optional
        Maps an unconstrained vector to the stored parameter vector.

    Returns
    -------
    PosteriorDraws
    """
    config = config or ChainConfig()
    rngs = chain_generators(config.seed, config.chains)
    if config.n_jobs > 1 and config.chains > 1:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(lambda r: _run_chain(fn, init, config, r), rngs))
    else:
        results = [_run_chain(fn, init, config, r) for r in rngs]
    q = np.stack([r["q"] for r in results])
    if transform is None:
        stored = q
    else:
        stored = np.apply_along_axis(transform, 2, q)
    if names is None:
        names = [f"x[{k}]" for k in range(stored.shape[2])]
    return PosteriorDraws(
        names=names,
        draws=stored,
        accept_stat=np.stack([r["accept"] for r in results]),
        divergent=np.stack([r["divergent"] for r in results]),
        n_leapfrog=np.stack([r["n_leapfrog"] for r in results]),
        tree_depth=np.stack([r["depth"] for r in results]),
        log_density=np.stack([r["lp"] for r in results]),
        step_size=np.array([r["step"] for r in results]),
        inv_metric=np.stack([r["inv_metric"] for r in results]),
        unconstrained=q,
    )


# ----------------------------------------------------------------------------
# Diagnostics

def _split(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def _rank_normalize(x):
    from scipy.stats import rankdata

    ranks = rankdata(x, method="average").reshape(x.shape)
    return ndtri((ranks - 0.375) / (x.size + 0.25))


def _rhat_basic(x):
    m, n = x.shape
    means = x.mean(axis=1)
    within = x.var(axis=1, ddof=1).mean()
    between = n * means.var(ddof=1)
    if within == 0:
        return np.nan
    var_plus = (n - 1) / n * within + between / n
    return math.sqrt(var_plus / within)


def _is_constant(x):
    x = np.asarray(x)
    return x.size == 0 or np.all(x == x.flat[0])


def split_rhat(x):
    """Rank-normalized split-Rhat, max of bulk and folded; NaN if constant.

    ``x`` has shape (chains, iterations).
    """
    if _is_constant(x):
        return np.nan
    s = _split(x)
    bulk = _rhat_basic(_rank_normalize(s))
    folded = np.abs(s - np.median(s))
    tail = _rhat_basic(_rank_normalize(folded)) if not _is_constant(folded) else bulk
    return float(max(bulk, tail))


def _autocov(x):
    n = x.shape[-1]
    size = 2 ** int(math.ceil(math.log2(2 * n)))
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, size, axis=-1)
    return np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n] / n


def _ess(x):
    """Effective sample size of (chains, iterations) draws, Geyer's
    initial monotone sequence on the multi-chain autocorrelation."""
    m, n = x.shape
    if n < 4 or _is_constant(x):
        return np.nan
    acov = _autocov(x)
    mean_var = acov[:, 0].mean() * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = np.zeros(n)
    rho[0] = 1.0
    even = 1.0
    odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = odd
    t = 1
    while t < n - 3 and even + odd > 0.0:
        even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if even + odd >= 0.0:
            rho[t + 1] = even
            rho[t + 2] = odd
        t += 2
    max_t = t - 2
    if rho[max_t + 1] > 0.0:
        max_t += 1
    t = 1
    while t <= max_t - 2:
        pair = rho[t + 1] + rho[t + 2]
        prev = rho[t - 1] + rho[t]
        if pair > prev:
            rho[t + 1] = prev / 2.0
            rho[t + 2] = prev / 2.0
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[: max_t + 1].sum() + rho[max_t + 1]
    tau = max(tau, 1.0 / math.log10(total))
    return total / tau


def ess_bulk(x):
    """Bulk effective sample size (rank-normalized split chains)."""
    if _is_constant(x):
        return np.nan
    return float(_ess(_rank_normalize(_split(x))))


def ess_mean(x):
    """Effective sample size for the mean (split chains, raw scale)."""
    return float(_ess(_split(x)))


def mcse_mean(x):
    """Monte Carlo standard error of the posterior mean."""
    x = np.asarray(x, dtype=float)
    if _is_constant(x):
        return 0.0
    return float(x.std(ddof=1) / math.sqrt(ess_mean(x)))


@dataclass(frozen=True)
class ParameterSummary:
    name: str
    mean: float
    sd: float
    median: float
    lo50: float
    hi50: float
    lo95: float
    hi95: float
    rhat: float
    ess_bulk: float

    @property
    def rhat_applicable(self):
        return not math.isnan(self.rhat)


QUANTILE_LEVELS = (0.025, 0.25, 0.5, 0.75, 0.975)


def interval_summary(values):
    """``(median, lo50, hi50, lo95, hi95)`` with type-7 empirical quantiles."""
    q = np.quantile(np.asarray(values, dtype=float).ravel(), QUANTILE_LEVELS)
    return q[2], q[1], q[3], q[0], q[4]


def summarize(draws, diagnostics=True):
    """Per-parameter medians, 50%/95% central intervals, split-Rhat, bulk-ESS.

    Parameters
    ----------
    draws : PosteriorDraws or array_like
        A bare array is read as (chains, iterations[, parameters]).
    diagnostics : bool
        When True (default) at least two chains and 100 iterations are
        required; when False, Rhat and ESS are reported as NaN whenever the
        draws are too few for them.

    Returns
    -------
    dict of str to ParameterSummary
    """
    if isinstance(draws, PosteriorDraws):
        names, arr = draws.names, draws.draws
    else:
        arr = np.asarray(draws, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :, None]
        elif arr.ndim == 2:
            arr = arr[:, :, None]
        names = [f"x[{k}]" for k in range(arr.shape[2])]
    chains, iters = arr.shape[:2]
    enough = chains >= MIN_CHAINS and iters >= MIN_ITERS
    if diagnostics and not enough:
        raise InsufficientDrawsError(
            f"diagnostics need >= {MIN_CHAINS} chains and >= {MIN_ITERS} iterations, "
            f"got {chains} x {iters}")
    out = {}
    for k, name in enumerate(names):
        x = arr[:, :, k]
        med, lo50, hi50, lo95, hi95 = interval_summary(x)
        rhat = split_rhat(x) if enough else np.nan
        ess = ess_bulk(x) if enough else np.nan
        out[name] = ParameterSummary(name, float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0,
                                     float(med), float(lo50), float(hi50), float(lo95), float(hi95),
                                     float(rhat), float(ess))
    return out
