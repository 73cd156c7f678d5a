"""Synthetic datasets with known journal probabilities, for recovery checks."""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .data import CountsMatrix, InstitutionProfile, OTHER_JOURNALS


@dataclass
class SyntheticData:
    counts: CountsMatrix
    profiles: list
    pi4: np.ndarray
    pi34: np.ndarray
    alpha: float


def make_synthetic(n_institutions=30, n_journals=12, articles=40, pi4_range=(0.05, 0.8),
                   three_star_gap=0.8, concentration=0.5, alpha=0.0, envir_sd=0.0,
                   seed=0):
    """Draw submissions and rating counts from the Poisson-binomial model.

    Journal 4* probabilities are evenly spaced over ``pi4_range`` (in
    shuffled order); 3*+ probabilities add ``three_star_gap`` on the probit
    scale.  Each institution spreads about ``articles`` outputs over the
    journals with Dirichlet(``concentration``) weights.  The last column is
    named ``Other journals`` so the data can go straight into the EM fit.
    """
    from scipy.special import ndtr, ndtri

    rng = np.random.default_rng(seed)
    J, I = n_journals, n_institutions
    pi4 = np.linspace(pi4_range[0], pi4_range[1], J)
    rng.shuffle(pi4)
    pi34 = ndtr(ndtri(pi4) + three_star_gap)
    sizes = np.maximum(1, rng.poisson(articles, I))
    weights = rng.dirichlet(np.full(J, concentration), I)
    X = np.array([rng.multinomial(n, w) for n, w in zip(sizes, weights)])
    envir = rng.normal(0.0, envir_sd, I) if envir_sd > 0 else np.zeros(I)
    envir = envir - envir.mean()
    th4, th34 = logit(pi4), logit(pi34)
    profiles = []
    for i in range(I):
        y4 = y34 = 0
        for j in range(J):
            n = X[i, j]
            if n == 0:
                continue
            p4 = expit(th4[j] + alpha * envir[i])
            p34 = max(p4, expit(th34[j] + alpha * envir[i]))
            u = rng.uniform(size=n)
            y4 += int(np.sum(u < p4))
            y34 += int(np.sum(u < p34))
        profiles.append(InstitutionProfile(f"inst{i:02d}", int(X[i].sum()), y4, y34,
                                           fte=float(X[i].sum()) / 4.0, envir=float(envir[i])))
    columns = [f"journal{j:02d}" for j in range(J - 1)] + [OTHER_JOURNALS]
    counts = CountsMatrix([p.institution for p in profiles], columns, X)
    return SyntheticData(counts, profiles, pi4, pi34, alpha)
