"""Predicted profiles, agreement indices, funding arithmetic and diagnostics.

Probits use :func:`scipy.special.ndtri`, the Cephes rational-approximation
inverse of the standard normal CDF (double precision, well inside 1e-9).
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import ndtri

from .data import CountsMatrix, ProfileArrays
from .exceptions import DataError, DegenerateInputError


@dataclass
class Predictions:
    """Expected 4* and 3*+ counts per institution (reals, never clamped)."""

    yhat4: np.ndarray
    yhat34: np.ndarray
    totals: np.ndarray
    institutions: list = field(default=None)

    @property
    def yhat3(self):
        return self.yhat34 - self.yhat4

    @property
    def negative_three_star(self):
        """Institutions whose predicted 3* count is negative."""
        return np.flatnonzero(self.yhat3 < 0)

    def proportions(self):
        return self.yhat4 / self.totals, self.yhat3 / self.totals


def _as_matrix(counts):
    if isinstance(counts, CountsMatrix):
        return counts.counts, counts.institutions
    X = np.asarray(counts)
    if X.ndim != 2:
        raise DataError("counts must be a 2-d array")
    return X, None


def _prob_vector(p, J, name):
    p = np.asarray(p, dtype=float)
    if p.shape != (J,):
        raise DataError(f"{name} has shape {p.shape}, expected ({J},)")
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise DataError(f"{name} must lie in [0, 1]")
    return p


def predict(counts, pi4, pi34):
    """Linear aggregation ``yhat = counts @ pi`` for both target levels."""
    X, inst = _as_matrix(counts)
    J = X.shape[1]
    pi4 = _prob_vector(pi4, J, "pi4")
    pi34 = _prob_vector(pi34, J, "pi34")
    X = X.astype(float)
    return Predictions(X @ pi4, X @ pi34, X.sum(axis=1), inst)


def _observed(profiles):
    """``(y4, y34, totals, fte)`` arrays from profiles in any supported form."""
    if isinstance(profiles, ProfileArrays):
        return (profiles.y4.astype(float), profiles.y34.astype(float),
                profiles.totals.astype(float), profiles.fte.astype(float))
    rows = list(profiles)
    return (np.array([p.y4 for p in rows], dtype=float),
            np.array([p.y34 for p in rows], dtype=float),
            np.array([p.total_outputs for p in rows], dtype=float),
            np.array([p.fte for p in rows], dtype=float))


def _check_same_rows(obs, pred):
    if obs.shape != pred.yhat4.shape:
        raise DataError(f"{obs.size} profiles but {pred.yhat4.size} predictions")


def dissimilarity(profiles, predictions):
    """Index of dissimilarity between observed and predicted profiles.

    ``1/(2N) * sum_i (|y4 - yhat4| + |y3 - yhat3| + |y4 + y3 - yhat4 - yhat3|)``
    with ``N`` the total number of outputs.
    """
    y4, y34, totals, _ = _observed(profiles)
    _check_same_rows(y4, predictions)
    N = totals.sum()
    if not N > 0:
        raise DegenerateInputError("no outputs: total N must be positive")
    y3 = y34 - y4
    h4, h3 = predictions.yhat4, predictions.yhat3
    s = np.abs(y4 - h4) + np.abs(y3 - h3) + np.abs(y4 + y3 - h4 - h3)
    return float(s.sum() / (2.0 * N))


@dataclass(frozen=True)
class FundingConfig:
    """Quality-related funding weights; 4* is worth four times 3*."""

    r3: float = 1.0

    def __post_init__(self):
        if not self.r3 > 0:
            raise ValueError("r3 must be positive")

    @property
    def r4(self):
        return 4.0 * self.r3


def money_redistribution(profiles, predictions, funding=None, fte=None):
    """Share of formula funding that moves between institutions.

    ``1/2 * sum_i m_i |r4 (p4 - phat4) + r3 (p3 - phat3)| /
    sum_i m_i (r4 p4 + r3 p3)``, with proportions from counts over ``N_i``.
    ``fte`` overrides the FTE carried by ``profiles``.
    """
    funding = funding or FundingConfig()
    y4, y34, totals, m = _observed(profiles)
    _check_same_rows(y4, predictions)
    if fte is not None:
        m = np.asarray(fte, dtype=float)
    if np.any(~(m > 0)):
        raise DataError("FTE must be positive for every institution")
    if np.any(~(totals > 0)):
        raise DegenerateInputError("every institution needs at least one output")
    p4, p3 = y4 / totals, (y34 - y4) / totals
    q4, q3 = predictions.yhat4 / totals, predictions.yhat3 / totals
    r3, r4 = funding.r3, funding.r4
    denom = np.sum(m * (r4 * p4 + r3 * p3))
    if not denom > 0:
        raise DegenerateInputError("no 3* or 4* outputs anywhere: funding denominator is zero")
    num = np.sum(m * np.abs(r4 * (p4 - q4) + r3 * (p3 - q3)))
    return float(0.5 * num / denom)


def funding_units(proportion4, proportion3, fte, funding=None):
    """Funding per institution in units of r3: ``m (r4 p4 + r3 p3)``."""
    funding = funding or FundingConfig()
    return np.asarray(fte, dtype=float) * (funding.r4 * np.asarray(proportion4)
                                           + funding.r3 * np.asarray(proportion3))


def funding_value(F, n3, n4):
    """Value of one 3* and one 4* output from a pot ``F``.

    ``x3 = F / (n3 + 4 n4)`` and ``x4 = 4 x3``.
    """
    denom = n3 + 4.0 * n4
    if denom == 0:
        raise DegenerateInputError("n3 + 4 n4 must be non-zero")
    x3 = F / denom
    return x3, 4.0 * x3


def ecological_bounds(X, T):
    """Method-of-bounds intervals for a 2x2 table.

    ``X`` is the share of the first group and ``T`` the overall rate.
    Returns ``((lo_b, hi_b), (lo_w, hi_w))`` for the first and second group.
    """
    if not 0.0 < X < 1.0:
        raise DegenerateInputError("X must lie strictly inside (0, 1); one group is empty")
    if not 0.0 <= T <= 1.0:
        raise ValueError("T must lie in [0, 1]")
    clip = lambda v: min(1.0, max(0.0, v))
    b = (clip((T - (1.0 - X)) / X), clip(T / X))
    w = (clip((T - X) / (1.0 - X)), clip(T / (1.0 - X)))
    return b, w


@dataclass
class ProbitGap:
    c: np.ndarray
    probit4: np.ndarray
    included: np.ndarray
    excluded: list
    flagged: list
    slope: float
    intercept: float


def probit_gap(pi4, pi34, names=None):
    """Per-journal ``c_j = probit(pi34_j) - probit(pi4_j)`` and its OLS line on
    ``probit(pi4_j)``.  Journals with an estimate at 0 or 1 are excluded;
    journals with ``c_j <= 0`` are flagged."""
    pi4 = np.asarray(pi4, dtype=float)
    pi34 = np.asarray(pi34, dtype=float)
    if pi4.shape != pi34.shape or pi4.ndim != 1:
        raise DataError("pi4 and pi34 must be equal-length vectors")
    names = list(names) if names is not None else [str(j) for j in range(pi4.size)]
    inside = (pi4 > 0) & (pi4 < 1) & (pi34 > 0) & (pi34 < 1)
    idx = np.flatnonzero(inside)
    x = ndtri(pi4[idx])
    c = ndtri(pi34[idx]) - x
    flagged = [names[j] for j, cj in zip(idx, c) if cj <= 0]
    excluded = [names[j] for j in np.flatnonzero(~inside)]
    if idx.size < 2 or np.ptp(x) == 0:
        slope, intercept = math.nan, math.nan
    else:
        slope, intercept = np.polyfit(x, c, 1)
    return ProbitGap(c, x, idx, excluded, flagged, float(slope), float(intercept))


@dataclass
class MetricCorrelation:
    pearson: float
    spearman: float
    slope: float
    intercept: float
    n_matched: int
    matched: list
    unmatched: list


def match_external(journals, external):
    """Pair model journals with external score rows.

    Parameters
    ----------
    journals : list of (name, title_key, issns)
    external : list of (journal_key, issn, score)
        ``journal_key`` is a title, normalized here.

    Returns
    -------
    list of (journal index, external row index); journals are tried by ISSN
    first, then by normalized title.  A key that points at two different
    journals (either direction) raises :class:`DataError`.
    """
    from .ingest.titles import normalize_title, normalize_issn
    from .exceptions import UnusableTitleError

    by_issn, by_title = {}, {}
    for r, (key, issn, _) in enumerate(external):
        for s in (issn or "").replace(",", ";").split(";"):
            s = normalize_issn(s)
            if s:
                if s in by_issn and by_issn[s] != r:
                    raise DataError(f"ISSN {s} appears on two external rows")
                by_issn[s] = r
        try:
            t = normalize_title(key) if key else ""
        except UnusableTitleError:
            t = ""
        if t:
            if t in by_title and by_title[t] != r:
                raise DataError(f"external title key {t!r} appears on two rows")
            by_title[t] = r
    pairs, used = [], {}
    for j, (name, title_key, issns) in enumerate(journals):
        rows = {by_issn[normalize_issn(s)] for s in issns if normalize_issn(s) in by_issn}
        if len(rows) > 1:
            raise DataError(f"journal {name!r} matches several external rows by ISSN")
        if not rows and title_key in by_title:
            rows = {by_title[title_key]}
        if not rows:
            continue
        r = rows.pop()
        if r in used:
            raise DataError(f"external row {external[r][0]!r} matches both "
                            f"{journals[used[r]][0]!r} and {name!r}")
        used[r] = j
        pairs.append((j, r))
    return pairs


def metric_correlation(pi4_medians, journals, external, log_transform=False):
    """Correlate journal 4* medians with an external journal metric.

    The OLS line regresses the median on the (optionally log10) score.
    Fewer than three matched journals is an error.
    """
    pi4 = np.asarray(pi4_medians, dtype=float)
    pairs = match_external(journals, external)
    if len(pairs) < 3:
        raise DataError(f"only {len(pairs)} journals matched the external metric; need >= 3")
    j_idx = np.array([j for j, _ in pairs])
    score = np.array([float(external[r][2]) for _, r in pairs])
    if log_transform:
        if np.any(score <= 0):
            raise DataError("log transform needs positive scores")
        score = np.log10(score)
    y = pi4[j_idx]
    pearson = float(stats.pearsonr(score, y)[0])
    spearman = float(stats.spearmanr(score, y)[0])
    slope, intercept = np.polyfit(score, y, 1)
    matched = sorted(journals[j][0] for j in j_idx)
    unmatched = [journals[j][0] for j in range(len(journals)) if j not in set(j_idx.tolist())]
    return MetricCorrelation(pearson, spearman, float(slope), float(intercept), len(pairs),
                             matched, unmatched)
