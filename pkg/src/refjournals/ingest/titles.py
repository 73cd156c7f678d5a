"""Normalization of journal titles and identifiers into matching keys."""
import re
import unicodedata

from ..exceptions import UnusableTitleError

_NON_ALNUM = re.compile(r"[\W_]+", re.UNICODE)
_LEADING_THE = re.compile(r"^\s*the(?=[\W_]|$)", re.IGNORECASE | re.UNICODE)


def normalize_title(title):
    """Matching key for a journal title.

    Decomposes Unicode and drops combining marks, lowercases, removes one
    leading "the" and then every character that is not a letter or digit.

    >>> normalize_title("The Review of Economic Studies")
    'reviewofeconomicstudies'

    Raises
    ------
    UnusableTitleError
        If nothing is left after normalization.
    """
    if title is None:
        raise UnusableTitleError("title is missing")
    text = unicodedata.normalize("NFKD", str(title))
    text = "".join(ch for ch in text if not unicodedata.combining(ch)).lower()
    text = _LEADING_THE.sub("", text, count=1)
    key = _NON_ALNUM.sub("", text)
    if not key:
        raise UnusableTitleError(f"title {title!r} is empty after normalization")
    return key


def normalize_issn(issn):
    """Uppercase ISSN digits without separators; '' when nothing usable."""
    if not issn:
        return ""
    return re.sub(r"[^0-9X]", "", str(issn).upper())


def normalize_isbn(isbn):
    if not isbn:
        return ""
    return re.sub(r"[^0-9X]", "", str(isbn).upper())


def normalize_doi(doi):
    """Lowercase DOI with any resolver prefix removed; '' when missing."""
    if not doi:
        return ""
    d = str(doi).strip().lower()
    d = re.sub(r"^(https?://)?(dx\.)?doi\.org/", "", d)
    d = re.sub(r"^doi:\s*", "", d)
    return d.strip()
