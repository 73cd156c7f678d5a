"""Core data containers shared by ingestion, models and metrics."""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .exceptions import DataError

OTHER_JOURNALS = "Other journals"
CONFERENCE = "Conference proceedings"
OTHER_OUTPUTS = "Other outputs"
AGGREGATE_COLUMNS = (OTHER_JOURNALS, CONFERENCE, OTHER_OUTPUTS)


class TargetLevel(str, Enum):
    """Which rating counts as a success."""

    FOUR_STAR = "4"
    THREE_PLUS = "34"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("*", "").replace("+", "")
        aliases = {"4": cls.FOUR_STAR, "four_star": cls.FOUR_STAR, "four": cls.FOUR_STAR,
                   "34": cls.THREE_PLUS, "3": cls.THREE_PLUS, "three_plus": cls.THREE_PLUS}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown target level {value!r}") from None

    @property
    def label(self):
        return "4*" if self is TargetLevel.FOUR_STAR else "3*+"


@dataclass
class CountsMatrix:
    """Submitted outputs per institution (rows) and journal column."""

    institutions: list
    columns: list
    counts: np.ndarray

    def __post_init__(self):
        self.institutions = [str(i) for i in self.institutions]
        self.columns = [str(c) for c in self.columns]
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape != (len(self.institutions), len(self.columns)):
            raise DataError(
                f"counts shape {counts.shape} does not match "
                f"{len(self.institutions)} institutions x {len(self.columns)} columns"
            )
        if np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0)):
            raise DataError("counts must be non-negative integers")
        self.counts = counts.astype(np.int64)
        if len(set(self.institutions)) != len(self.institutions):
            raise DataError("duplicate institution ids")
        if len(set(self.columns)) != len(self.columns):
            raise DataError("duplicate column ids")

    @property
    def totals(self):
        return self.counts.sum(axis=1)

    @property
    def column_totals(self):
        return self.counts.sum(axis=0)

    def column_index(self, name):
        return self.columns.index(name)

    def subset(self, rows):
        rows = np.asarray(rows)
        return CountsMatrix([self.institutions[r] for r in rows], list(self.columns),
                            self.counts[rows])


@dataclass
class InstitutionProfile:
    institution: str
    total_outputs: int
    y4: int
    y34: int
    fte: float = 0.0
    envir: float = 0.0

    def __post_init__(self):
        if not 0 <= self.y4 <= self.y34 <= self.total_outputs:
            raise DataError(
                f"{self.institution}: need 0 <= y4 ({self.y4}) <= y34 ({self.y34}) "
                f"<= N ({self.total_outputs})"
            )
        if self.fte < 0:
            raise DataError(f"{self.institution}: negative FTE")

    @property
    def y3(self):
        return self.y34 - self.y4

    def successes(self, target):
        return self.y4 if TargetLevel.parse(target) is TargetLevel.FOUR_STAR else self.y34


@dataclass
class ProfileArrays:
    """Profiles aligned to the row order of a :class:`CountsMatrix`."""

    y4: np.ndarray
    y34: np.ndarray
    fte: np.ndarray
    envir: np.ndarray
    totals: np.ndarray = field(repr=False)

    @property
    def y3(self):
        return self.y34 - self.y4

    def successes(self, target):
        return self.y4 if TargetLevel.parse(target) is TargetLevel.FOUR_STAR else self.y34

    def subset(self, rows):
        rows = np.asarray(rows)
        return ProfileArrays(self.y4[rows], self.y34[rows], self.fte[rows],
                             self.envir[rows], self.totals[rows])


def align_profiles(profiles, counts):
    """Order profiles like ``counts.institutions`` and check row totals agree."""
    by_id = {p.institution: p for p in profiles}
    missing = [i for i in counts.institutions if i not in by_id]
    extra = sorted(set(by_id) - set(counts.institutions))
    if missing or extra:
        raise DataError(
            f"institution mismatch: missing profiles for {missing}, "
            f"profiles without counts for {extra}"
        )
    rows = [by_id[i] for i in counts.institutions]
    totals = counts.totals
    for p, n in zip(rows, totals):
        if p.total_outputs != n:
            raise DataError(
                f"{p.institution}: profile total {p.total_outputs} != counts row sum {n}"
            )
    return ProfileArrays(
        y4=np.array([p.y4 for p in rows], dtype=np.int64),
        y34=np.array([p.y34 for p in rows], dtype=np.int64),
        fte=np.array([p.fte for p in rows], dtype=float),
        envir=np.array([p.envir for p in rows], dtype=float),
        totals=np.asarray(totals, dtype=np.int64),
    )
