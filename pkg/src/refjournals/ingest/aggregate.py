"""Counts matrix and institution profiles from clustered outputs."""
from fractions import Fraction

import numpy as np

from ..data import (CONFERENCE, OTHER_JOURNALS, OTHER_OUTPUTS, CountsMatrix,
                    InstitutionProfile)
from ..exceptions import DataError
from .records import OutputType


def named_clusters(clusters, threshold):
    """Clusters with at least ``threshold`` articles, largest first."""
    if int(threshold) < 1:
        raise ValueError("threshold must be at least 1")
    return [c for c in clusters if c.article_count >= threshold]


def column_names(named):
    """Display titles made unique (a clash gets the journal id appended)."""
    counts = {}
    for c in named:
        counts[c.display_title] = counts.get(c.display_title, 0) + 1
    return [c.display_title if counts[c.display_title] == 1 and c.display_title
            not in (OTHER_JOURNALS, CONFERENCE, OTHER_OUTPUTS)
            else f"{c.display_title} [{c.journal_id}]" for c in named]


def aggregate(clusters, outputs, threshold):
    """Institutions x columns counts: named journals with at least
    ``threshold`` articles, then ``Other journals``, ``Conference
    proceedings`` and ``Other outputs``.  Rows are sorted institution ids."""
    named = named_clusters(clusters, threshold)
    columns = column_names(named) + [OTHER_JOURNALS, CONFERENCE, OTHER_OUTPUTS]
    col_of = {}
    for j, c in enumerate(named):
        for oid in c.member_output_ids:
            col_of[oid] = j
    other_j = len(named)
    institutions = sorted({o.institution for o in outputs})
    row_of = {inst: i for i, inst in enumerate(institutions)}
    X = np.zeros((len(institutions), len(columns)), dtype=np.int64)
    for o in outputs:
        if o.output_type is OutputType.JOURNAL_ARTICLE:
            j = col_of.get(o.output_id, other_j)
        elif o.output_type is OutputType.CONFERENCE:
            j = other_j + 1
        else:
            j = other_j + 2
        X[row_of[o.institution], j] += 1
    return CountsMatrix(institutions, columns, X)


def _round_half_even(x):
    return int(round(Fraction(x)))


def build_profiles(results_rows, counts):
    """Convert percentage profiles to counts on the submitted totals.

    ``y4 = round(N pct4 / 100)`` and ``y34 = round(N (pct4 + pct3) / 100)``
    with exact round-half-to-even; rounding the cumulative share keeps
    ``y4 <= y34``.  The environment share is centred to mean zero.
    """
    by_inst = {r.institution: r for r in results_rows}
    missing = [i for i in counts.institutions if i not in by_inst]
    extra = sorted(set(by_inst) - set(counts.institutions))
    if missing or extra:
        raise DataError(f"institution mismatch: in counts but not results {missing}; "
                        f"in results but not counts {extra}")
    rows = [by_inst[i] for i in counts.institutions]
    envir = np.array([r.envir_pct4 for r in rows], dtype=float)
    envir = envir - envir.mean() if envir.size else envir
    out = []
    for r, N, e in zip(rows, counts.totals, envir):
        N = int(N)
        y4 = min(max(_round_half_even(Fraction(N) * Fraction(r.pct4) / 100), 0), N)
        y34 = min(max(_round_half_even(Fraction(N) * (Fraction(r.pct4) + Fraction(r.pct3)) / 100), y4), N)
        out.append(InstitutionProfile(r.institution, N, y4, y34, float(r.fte), float(e)))
    return out
