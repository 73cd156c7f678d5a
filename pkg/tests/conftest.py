import itertools

import numpy as np
import pytest


def enumerate_pmf(probs):
    """Poisson-binomial PMF by summing over all 2^n outcomes."""
    probs = np.asarray(probs, dtype=float)
    n = probs.size
    pmf = np.zeros(n + 1)
    for bits in itertools.product((0, 1), repeat=n):
        b = np.array(bits)
        pmf[b.sum()] += np.prod(np.where(b == 1, probs, 1.0 - probs))
    return pmf


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def write_pipeline_inputs(directory, data, singleton_other=True):
    """Submissions and results CSVs that ingest back into ``data``.

    Named journals get a title and an ISSN; "Other journals" articles each get
    their own one-off title so they stay below any threshold above 1.
    """
    import os

    from refjournals.ingest.records import RESULTS_FIELDS, SUBMISSION_FIELDS, csv_text

    X = data.counts.counts
    sub, k = [], 0
    for i, inst in enumerate(data.counts.institutions):
        for j, col in enumerate(data.counts.columns):
            for _ in range(int(X[i, j])):
                k += 1
                if col == "Other journals" and singleton_other:
                    title, issn = f"Occasional Review {k}", ""
                else:
                    title, issn = f"Journal of {col.title()}", f"{1000 + j:04d}-{j:04d}"
                sub.append([f"o{k:05d}", inst, "7", "D", f"10.{j}/x{k}", issn, "", title])
    res = []
    for i, p in enumerate(data.profiles):
        pct4 = 100.0 * p.y4 / p.total_outputs
        pct3 = 100.0 * (p.y34 - p.y4) / p.total_outputs
        res.append([p.institution, "7", repr(p.fte), repr(pct4), repr(pct3),
                    repr(100.0 - pct4 - pct3), "0", "0", repr(20.0 + 5 * (i % 3))])
    s_path = os.path.join(directory, "submissions.csv")
    r_path = os.path.join(directory, "results.csv")
    with open(s_path, "w", encoding="utf-8") as fh:
        fh.write(csv_text(SUBMISSION_FIELDS, sub))
    with open(r_path, "w", encoding="utf-8") as fh:
        fh.write(csv_text(RESULTS_FIELDS, res))
    return s_path, r_path


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; the terminal summary prints them in order."""
    def record(number, ok, detail):
        ACCEPTANCE_LINES.append((number, f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
            terminalreporter.write_line(line)
