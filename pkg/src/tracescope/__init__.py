"""tracescope: verbatim training-data tracing over suffix-array indexes."""

from .index_builder import (
    BuildConfig,
    BuildError,
    DocumentRecord,
    ShardLoadError,
    UnigramTable,
    build_suffix_array,
    compute_unigram_table,
    ingest,
    ingest_pretokenized,
    validate_shard,
)
from .pipeline import (
    DocumentHit,
    MatchedSpan,
    TraceConfig,
    TraceResult,
    Tracer,
    filter_spans,
    merge_spans,
    suppress_non_maximal,
)
from .search_engine import (
    PrefixMatch,
    ProbeCounters,
    SaSegment,
    SearchEngine,
    TakedownAck,
    UnknownDocumentError,
)
from .tokenization import TokenClassTable, Tokenizer

__all__ = [
    "BuildConfig",
    "BuildError",
    "DocumentRecord",
    "DocumentHit",
    "MatchedSpan",
    "PrefixMatch",
    "ProbeCounters",
    "SaSegment",
    "SearchEngine",
    "ShardLoadError",
    "TakedownAck",
    "TokenClassTable",
    "Tokenizer",
    "TraceConfig",
    "TraceResult",
    "Tracer",
    "UnigramTable",
    "UnknownDocumentError",
    "build_suffix_array",
    "compute_unigram_table",
    "filter_spans",
    "ingest",
    "ingest_pretokenized",
    "merge_spans",
    "suppress_non_maximal",
    "validate_shard",
]

__version__ = "0.1.0"
