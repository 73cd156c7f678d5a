"""Raw submission and results records, with CSV readers and writers."""
import csv
import io
import logging
import os
import tempfile
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction

import numpy as np

from ..data import CountsMatrix
from ..exceptions import DataError

log = logging.getLogger(__name__)

SUBMISSION_FIELDS = ("output_id", "institution", "uoa", "output_type", "doi", "issn_list",
                     "isbn", "volume_title")
RESULTS_FIELDS = ("institution", "uoa", "fte", "outputs_pct_4", "outputs_pct_3",
                  "outputs_pct_2", "outputs_pct_1", "outputs_pct_u", "envir_pct_4")


class OutputType(str, Enum):
    JOURNAL_ARTICLE = "journal-article"
    CONFERENCE = "conference"
    OTHER = "other"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key =str(value or "").strip().lower().replace("_", "-").replace(" ", "-")
        if key in ("journal-article", "article", "journal", "d"):
            return cls.JOURNAL_ARTICLE
        if key in ("conference", "conference-proceedings", "conference-contribution", "e"):
            return cls.CONFERENCE
        return cls.OTHER


@dataclass(frozen=True)
class RawOutput:
    output_id: str
    institution: str
    output_type: OutputType = OutputType.JOURNAL_ARTICLE
    doi: str = ""
    issns: tuple = ()
    isbn: str = ""
    volume_title: str = ""
    uoa: str = ""

    def __post_init__(self):
        object.__setattr__(self, "output_type", OutputType.parse(self.output_type))
        object.__setattr__(self, "issns", tuple(s for s in self.issns if s))
        for name in ("doi", "isbn", "volume_title", "uoa"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, "")

    @property
    def is_article(self):
        return self.output_type is OutputType.JOURNAL_ARTICLE

    def with_metadata(self, title, issns):
        return replace(self, volume_title=title or "", issns=tuple(issns))


@dataclass(frozen=True)
class ResultRow:
    institution: str
    fte: float
    pct4: Fraction
    pct3: Fraction
    envir_pct4: float
    uoa: str = ""
    pct_lower: tuple = field(default=(), repr=False)


def _split_issns(text):
    return tuple(s.strip() for s in str(text or "").replace(",", ";").split(";") if s.strip())


def _open_csv(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return open(path, newline="", encoding="utf-8-sig")


def _check_header(reader, required, path):
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")


def read_submissions(path, uoa=None):
    """Read the submissions CSV into :class:`RawOutput` rows."""
    with _open_csv(path) as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, SUBMISSION_FIELDS, path)
        rows, seen = [], set()
        for line, rec in enumerate(reader, start=2):
            oid = (rec["output_id"] or "").strip()
            inst = (rec["institution"] or "").strip()
            if not oid or not inst:
                raise DataError(f"{path}:{line}: output_id and institution are required")
            if oid in seen:
                raise DataError(f"{path}:{line}: duplicate output_id {oid!r}")
            seen.add(oid)
            if uoa is not None and str(rec["uoa"]).strip() != str(uoa):
                continue
            rows.append(RawOutput(oid, inst, rec["output_type"], (rec["doi"] or "").strip(),
                                  _split_issns(rec["issn_list"]), (rec["isbn"] or "").strip(),
                                  (rec["volume_title"] or "").strip(), str(rec["uoa"]).strip()))
    return rows


def _number(text, path, line, name):
    try:
        value = Fraction(str(text).strip())
    except (ValueError, ZeroDivisionError):
        raise DataError(f"{path}:{line}: {name}={text!r} is not a number") from None
    return value


def read_results(path, uoa=None):
    """Read the results CSV (published percentage profiles)."""
    with _open_csv(path) as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, RESULTS_FIELDS, path)
        rows, seen = [], set()
        for line, rec in enumerate(reader, start=2):
            if uoa is not None and str(rec["uoa"]).strip() != str(uoa):
                continue
            inst = (rec["institution"] or "").strip()
            if inst in seen:
                raise DataError(f"{path}:{line}: duplicate institution {inst!r}")
            seen.add(inst)
            pct = {k: _number(rec[k], path, line, k) for k in RESULTS_FIELDS[3:8]}
            for k, v in pct.items():
                if not 0 <= v <= 100:
                    raise DataError(f"{path}:{line}: {k}={float(v)} outside [0, 100]")
            if pct["outputs_pct_4"] + pct["outputs_pct_3"] > 100:
                raise DataError(f"{path}:{line}: 4* and 3* percentages exceed 100")
            total = sum(pct.values())
            if abs(total - 100) > 1:
                log.warning("%s:%d: output percentages sum to %.1f", path, line, float(total))
            fte = float(_number(rec["fte"], path, line, "fte"))
            envir = float(_number(rec["envir_pct_4"], path, line, "envir_pct_4"))
            rows.append(ResultRow(inst, fte, pct["outputs_pct_4"], pct["outputs_pct_3"], envir,
                                  str(rec["uoa"]).strip(),
                                  tuple(pct[k] for k in RESULTS_FIELDS[5:8])))
    return rows


# ----------------------------------------------------------------------------
# writers

def atomic_write_text(path, text):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float(x):
    """Shortest round-trip repr, so reruns give identical bytes."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    atomic_write_text(path, csv_text(header, rows))


def write_counts_csv(path, counts):
    rows = [[inst] + [int(v) for v in row] for inst, row in zip(counts.institutions, counts.counts)]
    write_csv(path, ["institution"] + list(counts.columns), rows)


def read_counts_csv(path):
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0] != "institution":
            raise DataError(f"{path}: first column must be 'institution'")
        inst, data = [], []
        for line, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            inst.append(row[0])
            try:
                data.append([int(v) for v in row[1:]])
            except ValueError:
                raise DataError(f"{path}:{line}: counts must be integers") from None
    return CountsMatrix(inst, header[1:], np.array(data, dtype=np.int64).reshape(len(inst), len(header) - 1))


PROFILE_FIELDS = ("institution", "total_outputs", "y4", "y34", "fte", "envir")


def write_profiles_csv(path, profiles):
    write_csv(path, PROFILE_FIELDS,
              [[p.institution, p.total_outputs, p.y4, p.y34, float(p.fte), float(p.envir)]
               for p in profiles])


def read_profiles_csv(path):
    from ..data import InstitutionProfile

    with _open_csv(path) as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, PROFILE_FIELDS, path)
        out = []
        for line, rec in enumerate(reader, start=2):
            try:
                out.append(InstitutionProfile(rec["institution"], int(rec["total_outputs"]),
                                              int(rec["y4"]), int(rec["y34"]),
                                              float(rec["fte"]), float(rec["envir"])))
            except ValueError as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
    return out
