"""DOI metadata lookup with an append-only on-disk cache."""
import json
import logging
import os
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Protocol

from .titles import normalize_doi

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DoiMetadata:
    container_title: str
    issns: tuple


class ResolverError(RuntimeError):
    """Transport failure (as opposed to a DOI the registry does not know)."""


class MetadataResolver(Protocol):
    def lookup(self, doi: str) -> Optional[DoiMetadata]:
        """Metadata for ``doi``; None when the registry has no record."""


class DictResolver:
    """In-memory resolver, handy for fixtures and tests."""

    def __init__(self, records):
        self.records = {normalize_doi(k): v for k, v in records.items()}
        self.calls = 0

    def lookup(self, doi):
        self.calls += 1
        rec = self.records.get(normalize_doi(doi))
        if rec is None or isinstance(rec, DoiMetadata):
            return rec
        title, issns = rec
        return DoiMetadata(title, tuple(issns))


class CrossrefResolver:
    """Lookup against a Crossref-style ``/works/{doi}`` JSON endpoint."""

    def __init__(self, base_url="https://api.crossref.org/works/", timeout=10.0, retries=3,
                 backoff=1.0, user_agent="refjournals/0.1"):
        self.base_url = base_url if base_url.endswith("/") else base_url + "/"
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.user_agent = user_agent

    def lookup(self, doi):
        url = self.base_url + urllib.parse.quote(normalize_doi(doi), safe="/")
        req = urllib.request.Request(url, headers={"User-Agent": self.user_agent,
                                                   "Accept": "application/json"})
        last = None
        for attempt in range(self.retries + 1):
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                break
            except urllib.error.HTTPError as exc:
                if exc.code == 404:
                    return None
                last = exc
            except (urllib.error.URLError, TimeoutError, OSError, ValueError) as exc:
                last = exc
            if attempt < self.retries:
                time.sleep(self.backoff * 2**attempt)
        else:
            raise ResolverError(f"{doi}: {last}")
        msg = payload.get("message", payload)
        titles = msg.get("container-title") or []
        title = titles[0] if isinstance(titles, list) and titles else (titles or "")
        return DoiMetadata(str(title), tuple(msg.get("ISSN") or ()))


class CachedResolver:
    """Wrap a resolver with a JSON-lines cache; without one it serves the
    cache only.  Misses reported by the registry are cached too; transport
    failures are not."""

    def __init__(self, path, inner=None):
        self.path = path
        self.inner = inner
        self._lock = threading.Lock()
        self._cache = {}
        if path and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    doi = normalize_doi(rec["doi"])
                    self._cache[doi] = (None if rec.get("title") is None
                                        else DoiMetadata(rec["title"], tuple(rec.get("issns") or ())))

    def __contains__(self, doi):
        return normalize_doi(doi) in self._cache

    def lookup(self, doi):
        key = normalize_doi(doi)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        if self.inner is None:
            return None
        meta = self.inner.lookup(key)
        with self._lock:
            if key not in self._cache:
                self._cache[key] = meta
                if self.path:
                    rec = {"doi": key, "title": None if meta is None else meta.container_title,
                           "issns": [] if meta is None else list(meta.issns)}
                    with open(self.path, "a", encoding="utf-8") as fh:
                        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return meta


@dataclass
class EnrichmentReport:
    resolved: list = field(default_factory=list)
    changed: list = field(default_factory=list)
    unresolved: list = field(default_factory=list)
    failed: list = field(default_factory=list)


def enrich_with_doi_metadata(outputs, resolver, max_workers=8):
    """Replace title and ISSNs of journal articles with registry metadata.

    Unknown DOIs keep their fields and are listed in ``unresolved``;
    transport failures are listed in ``failed``.  Output order and content
    do not depend on lookup timing.
    """
    dois = sorted({normalize_doi(o.doi) for o in outputs if o.is_article and normalize_doi(o.doi)})

    def one(doi):
        try:
            return doi, resolver.lookup(doi), None
        except Exception as exc:  # noqa: BLE001 - a failed lookup must not abort the run
            return doi, None, exc

    if max_workers > 1 and len(dois) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            answers = list(pool.map(one, dois))
    else:
        answers = [one(d) for d in dois]
    meta = {d: m for d, m, _ in answers}
    errors = {d for d, _, e in answers if e is not None}
    report = EnrichmentReport()
    out = []
    for o in outputs:
        doi = normalize_doi(o.doi)
        if not (o.is_article and doi):
            out.append(o)
            continue
        m = meta.get(doi)
        if m is None:
            (report.failed if doi in errors else report.unresolved).append(o.output_id)
            out.append(o)
            continue
        new = o.with_metadata(m.container_title, m.issns)
        report.resolved.append(o.output_id)
        if new != o:
            report.changed.append(o.output_id)
        out.append(new)
    for d in sorted(errors):
        log.warning("metadata lookup failed for %s", d)
    return out, report
