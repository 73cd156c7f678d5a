"""Group journal articles into journals through shared identifiers.

Outputs and identifier keys form a bipartite graph; each connected
component is one journal.
"""
import logging
from collections import Counter
from dataclasses import dataclass

import networkx as nx

from ..exceptions import UnusableTitleError
from .titles import normalize_doi, normalize_isbn, normalize_issn, normalize_title

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class JournalCluster:
    journal_id: int
    display_title: str
    member_output_ids: frozenset
    identifier_keys: frozenset

    @property
    def article_count(self):
        return len(self.member_output_ids)

    @property
    def title_key(self):
        try:
            return normalize_title(self.display_title)
        except UnusableTitleError:
            return ""

    @property
    def issns(self):
        return sorted(k[5:] for k in self.identifier_keys if k.startswith("issn:"))


def identifier_keys(output):
    """Typed identifier keys of one output (``issn:``, ``isbn:``, ``doi:``, ``title:``)."""
    keys = set()
    for s in output.issns:
        s = normalize_issn(s)
        if s:
            keys.add("issn:" + s)
    isbn = normalize_isbn(output.isbn)
    if isbn:
        keys.add("isbn:" + isbn)
    doi = normalize_doi(output.doi)
    if doi:
        keys.add("doi:" + doi)
    if output.volume_title:
        try:
            keys.add("title:" + normalize_title(output.volume_title))
        except UnusableTitleError:
            pass
    return keys


def _display_title(members):
    titles = Counter(m.volume_title for m in members if m.volume_title)
    if not titles:
        return ""
    return min(titles.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def cluster_journals(outputs):
    """Connected components of the output/identifier graph for journal articles.

    Clusters are numbered from 1 in order of decreasing size, then display
    title, then smallest member id, so the result does not depend on the
    input order.  Articles without any identifier become singletons.
    """
    articles = [o for o in outputs if o.is_article]
    by_id = {o.output_id: o for o in articles}
    g = nx.Graph()
    for o in articles:
        g.add_node(("out", o.output_id))
        keys = identifier_keys(o)
        if not keys:
            log.warning("output %s has no journal identifier; kept as a singleton", o.output_id)
        for k in keys:
            g.add_edge(("out", o.output_id), ("key", k))
    found = []
    for comp in nx.connected_components(g):
        ids = frozenset(n[1] for n in comp if n[0] == "out")
        if not ids:
            continue
        keys = frozenset(n[1] for n in comp if n[0] == "key")
        members = [by_id[i] for i in sorted(ids)]
        title = _display_title(members) or (min(keys) if keys else min(ids))
        found.append((title, ids, keys))
    found.sort(key=lambda c: (-len(c[1]), c[0], min(c[1])))
    return [JournalCluster(k + 1, t, ids, keys) for k, (t, ids, keys) in enumerate(found)]
