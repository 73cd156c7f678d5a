"""Raw submissions to a counts matrix and institution profiles."""
from .aggregate import aggregate, build_profiles, column_names, named_clusters
from .cluster import JournalCluster, cluster_journals, identifier_keys
from .records import (OutputType, RawOutput, ResultRow, read_counts_csv, read_profiles_csv,
                      read_results, read_submissions, write_counts_csv, write_profiles_csv)
from .resolver import (CachedResolver, CrossrefResolver, DictResolver, DoiMetadata,
                       EnrichmentReport, MetadataResolver, ResolverError,
                       enrich_with_doi_metadata)
from .titles import normalize_doi, normalize_issn, normalize_title

__all__ = [
    "aggregate", "build_profiles", "column_names", "named_clusters",
    "JournalCluster", "cluster_journals", "identifier_keys",
    "OutputType", "RawOutput", "ResultRow", "read_counts_csv", "read_profiles_csv",
    "read_results", "read_submissions", "write_counts_csv", "write_profiles_csv",
    "CachedResolver", "CrossrefResolver", "DictResolver", "DoiMetadata", "EnrichmentReport",
    "MetadataResolver", "ResolverError", "enrich_with_doi_metadata",
    "normalize_doi", "normalize_issn", "normalize_title",
]
