"""End-to-end tracing: maximal matching spans, unigram filtering, document
retrieval, span/document merging, and BM25 relevance bucketing.

The heavy step is span computation: for every word-start position of the
response we take the max over shards of the longest matching prefix (one
find per shard per position), shrink to the self-contained form, then
suppress non-maximal spans. Per-position subqueries are independent and
run on a thread pool; results are keyed by position so completion order
never matters.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bm25 import OkapiBM25, split_terms
from .index_builder import UnigramTable
from .search_engine import DocumentSnippet, ProbeCounters, SearchEngine

RELEVANCE_LEVELS = ("low", "medium", "high")


class TraceConfigError(ValueError):
    """A tracing option is outside its documented bounds."""


@dataclass(frozen=True)
class TraceConfig:
    keep_fraction: float = 0.05
    max_docs_per_span: int = 10
    snippet_window: int = 80
    extended_window: int = 500
    high_threshold: float = 0.7
    medium_threshold: float = 0.5
    normalization_coefficient: float = 0.18
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.keep_fraction <= 1:
            raise TraceConfigError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")
        if self.max_docs_per_span < 1:
            raise TraceConfigError(f"max_docs_per_span must be >= 1, got {self.max_docs_per_span}")
        if self.snippet_window < 1 or self.extended_window < 1:
            raise TraceConfigError("snippet_window and extended_window must be positive")
        if not 0 < self.medium_threshold < self.high_threshold:
            raise TraceConfigError("thresholds must satisfy 0 < medium < high")
        if self.normalization_coefficient <= 0:
            raise TraceConfigError("normalization_coefficient must be positive")


@dataclass
class MatchedSpan:
    """Half-open token interval of the response with match statistics."""

    begin: int
    end: int
    unigram_logprob: float
    occurrence_count: int
    relevance: str = "low"

    @property
    def length(self) -> int:
        return self.end - self.begin


@dataclass
class DocumentHit:
    shard_id: int
    doc_id: int
    source: str
    stage: str
    snippet: str
    snippet_token_range: tuple[int, int]
    matched_span_ids: list[int]
    bm25_raw: float = 0.0
    bm25_normalized: float = 0.0
    relevance: str = "low"


@dataclass
class TraceStats:
    latency_ms: float = 0.0
    probe_count: int = 0
    span_candidates: int = 0
    spans_kept: int = 0


@dataclass
class TraceResult:
    spans: list[MatchedSpan]
    documents: list[DocumentHit]
    adjacency: list[tuple[int, int]]
    stats: TraceStats
    span_texts: list[str] = field(default_factory=list)
    span_char_ranges: list[tuple[int, int]] = field(default_factory=list)

    def to_payload(self, include_latency: bool = True) -> dict:
        """The documented JSON schema shared by the service and the CLI.

        latency_ms is wall-clock and excluded wherever byte-stable output
        is required (CLI json format, determinism checks).
        """
        spans = []
        for i, s in enumerate(self.spans):
            char_begin, char_end = self.span_char_ranges[i]
            spans.append({
                "id": i,
                "begin": s.begin,
                "end": s.end,
                "text": self.span_texts[i],
                "char_begin": char_begin,
                "char_end": char_end,
                "relevance": s.relevance,
                "unigram_logprob": s.unigram_logprob,
                "occurrence_count": s.occurrence_count,
            })
        documents = []
        for i, d in enumerate(self.documents):
            documents.append({
                "id": i,
                "shard_id": d.shard_id,
                "doc_id": d.doc_id,
                "source": d.source,
                "stage": d.stage,
                "snippet": d.snippet,
                "snippet_token_range": list(d.snippet_token_range),
                "relevance": d.relevance,
                "bm25_raw": d.bm25_raw,
                "bm25_normalized": d.bm25_normalized,
                "span_ids": d.matched_span_ids,
            })
        stats = {
            "probe_count": self.stats.probe_count,
            "span_candidates": self.stats.span_candidates,
            "spans_kept": self.stats.spans_kept,
        }
        if include_latency:
            stats["latency_ms"] = self.stats.latency_ms
        return {
            "spans": spans,
            "documents": documents,
            "adjacency": [list(pair) for pair in self.adjacency],
            "stats": stats,
        }


def shrink_span(length: int, begin: int, total: int, delim, word_start) -> int:
    """Largest span length at `begin` that is self-contained.

    Keeps delimiters out of the span interior (last token may be one) and
    ends the span at a word boundary or the end of the response.
    """
    if length <= 0:
        return 0
    for k in range(begin, begin + length - 1):
        if delim(k):
            length = k - begin + 1
            break
    while length > 0:
        end = begin + length
        if end == total or word_start(end):
            break
        length -= 1
    return length


def suppress_non_maximal(spans: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Keep spans whose end exceeds every earlier span's end (begin-sorted)."""
    kept = []
    max_end = 0
    for begin, end in sorted(spans):
        if end > max_end:
            max_end = end
            kept.append((begin, end))
    return kept


@dataclass
class KeptSpan:
    begin: int
    end: int
    unigram_logprob: float


def filter_spans(candidates: list[tuple[int, int]], unigrams: UnigramTable,
                 tokens, response_len: int, keep_fraction: float) -> list[KeptSpan]:
    """Keep the ceil(keep_fraction * L) candidates with smallest span
    unigram probability; ties prefer longer spans, then smaller begins."""
    k = math.ceil(keep_fraction * response_len)
    scored = []
    for begin, end in candidates:
        logprob = 0.0
        for t in tokens[begin:end]:
            logprob += unigrams.log_prob(int(t))
        scored.append(KeptSpan(begin, end, logprob))
    scored.sort(key=lambda s: (s.unigram_logprob, -(s.end - s.begin), s.begin))
    kept = scored[:k]
    kept.sort(key=lambda s: s.begin)
    return kept


def merge_spans(spans: list[tuple[int, int]]) -> list[tuple[tuple[int, int], list[int]]]:
    """Union overlapping spans (sharing >= 1 token); adjacency alone does
    not merge. Returns merged intervals with constituent indices."""
    merged: list[tuple[tuple[int, int], list[int]]] = []
    for i, (begin, end) in enumerate(spans):
        if merged and begin < merged[-1][0][1]:
            (mb, me), members = merged[-1]
            merged[-1] = ((mb, max(me, end)), members + [i])
        else:
            merged.append(((begin, end), [i]))
    return merged


def relevance_bucket(normalized: float, config: TraceConfig) -> str:
    if normalized >= config.high_threshold:
        return "high"
    if normalized >= config.medium_threshold:
        return "medium"
    return "low"


class Tracer:
    """Reentrant tracing facade over an immutable SearchEngine.

    `parallelism` sets the span-computation pool width. Width > 1 only
    pays off when probes actually block on disk reads (large cold indexes
    on real drives); on a RAM-cached index the work is CPU-bound and a
    single worker is fastest.
    """

    def __init__(self, engine: SearchEngine, config: TraceConfig | None = None,
                 parallelism: int = 1):
        self.engine = engine
        self.config = config or TraceConfig()
        self.parallelism = max(1, parallelism)
        self._pool = ThreadPoolExecutor(max_workers=self.parallelism,
                                        thread_name_prefix="tracescope-span")

    # -- step 1 ---------------------------------------------------------

    def maximal_matching_spans(self, tokens: list[int], word_starts: list[bool],
                               delimiters: list[bool],
                               counters: ProbeCounters | None = None) -> list[tuple[int, int]]:
        total = len(tokens)
        if total == 0:
            return []
        resp_q = self.engine.shards[0].prepare_query(tokens)
        positions = [b for b in range(total) if word_starts[b]]

        def probe(b: int) -> tuple[int, int, ProbeCounters]:
            local = ProbeCounters()
            best = 0
            q = resp_q[b:]
            for shard in self.engine.shards:
                length, _ = shard.longest_prefix_prepared(q, local)
                if length > best:
                    best = length
            best = shrink_span(best, b, total,
                               lambda k: delimiters[k],
                               lambda k: word_starts[k])
            return b, best, local

        if len(positions) > 1:
            results = list(self._pool.map(probe, positions))
        else:
            results = [probe(b) for b in positions]
        spans = []
        for b, length, local in sorted(results):
            if counters is not None:
                counters.merge(local)
            if length > 0:
                spans.append((b, b + length))
        return suppress_non_maximal(spans)

    # -- steps 3-4 helpers ------------------------------------------------

    def _surviving_occurrences(self, span_tokens, counters) -> list[tuple[int, int]]:
        occurrences = []
        for shard in self.engine.shards:
            seg = shard.find(span_tokens, counters)
            if seg.count == 0:
                continue
            positions = self.engine._surviving_positions(shard, seg, counters)
            occurrences.extend((shard.shard_id, int(p)) for p in positions)
        return occurrences

    def _sample(self, occurrences: list[tuple[int, int]], span: tuple[int, int],
                config: TraceConfig) -> list[tuple[int, int]]:
        cap = config.max_docs_per_span
        if len(occurrences) <= cap:
            return occurrences
        seq = np.random.SeedSequence([config.rng_seed, span[0], span[1]])
        rng = np.random.Generator(np.random.PCG64(seq))
        chosen = rng.choice(len(occurrences), size=cap, replace=False)
        return [occurrences[i] for i in np.sort(chosen)]

    # -- step 5 -----------------------------------------------------------

    def rerank_and_bucket(self, documents: list[DocumentHit], extended_texts: list[str],
                          prompt: str, response: str, config: TraceConfig) -> list[DocumentHit]:
        """Score documents with BM25 (query = prompt + response), normalize
        by coefficient * response characters, bucket, and sort."""
        corpus = [split_terms(text) for text in extended_texts]
        scorer = OkapiBM25(corpus)
        query = split_terms(prompt + " " + response)
        raw_scores = scorer.get_scores(query)
        denom = config.normalization_coefficient * max(len(response), 1)
        scored = []
        for doc, raw in zip(documents, raw_scores):
            normalized = min(max(raw / denom, 0.0), 1.5)
            scored.append(replace(doc, bm25_raw=raw, bm25_normalized=normalized,
                                  relevance=relevance_bucket(normalized, config)))
        scored.sort(key=lambda d: (-d.bm25_raw, d.shard_id, d.doc_id))
        return scored

    # -- the full pipeline -------------------------------------------------

    def trace(self, prompt: str, response: str, config: TraceConfig | None = None) -> TraceResult:
        config = config or self.config
        if not response:
            raise ValueError("response must be non-empty")
        started = time.perf_counter()
        counters = ProbeCounters()

        session = self.engine.tokenizer.session(max_token_id=self.engine.separator)
        tokens = session.encode(response)
        total = len(tokens)
        word_starts = session.word_starts(tokens)
        delimiters = [session.is_delimiter(t) for t in tokens]
        token_texts = [session.decode_token(t) for t in tokens]
        char_offsets = [0]
        for text in token_texts:
            char_offsets.append(char_offsets[-1] + len(text))

        candidates = self.maximal_matching_spans(tokens, word_starts, delimiters, counters)
        kept = filter_spans(candidates, self.engine.unigrams, tokens, total, config.keep_fraction)

        # step 3: occurrences per kept span, takedown-filtered, capped by sampling
        span_positions: list[list[tuple[int, int]]] = []
        span_counts: list[int] = []
        surviving: list[KeptSpan] = []
        for span in kept:
            occurrences = self._surviving_occurrences(tokens[span.begin:span.end], counters)
            if not occurrences:
                continue  # span vanished (takedown); dropped with no error
            surviving.append(span)
            span_counts.append(len(occurrences))
            span_positions.append(self._sample(occurrences, (span.begin, span.end), config))

        # step 4: merge overlapping spans, then group hits per document
        merged = merge_spans([(s.begin, s.end) for s in surviving])
        spans_out: list[MatchedSpan] = []
        doc_groups: dict[tuple[int, int], dict] = {}
        for span_id, ((begin, end), members) in enumerate(merged):
            logprob = sum(self.engine.unigrams.log_prob(int(t)) for t in tokens[begin:end])
            if len(members) == 1:
                count = span_counts[members[0]]
            else:
                # a union interval may occur fewer times than its parts (or never)
                count = len(self._surviving_occurrences(tokens[begin:end], counters))
            spans_out.append(MatchedSpan(begin, end, logprob, count))
            for member in members:
                for shard_id, pos in span_positions[member]:
                    shard = self.engine.shards[shard_id]
                    doc_id = shard.doc_index_of(pos)
                    group = doc_groups.setdefault((shard_id, doc_id), {"span_ids": set(), "earliest": pos})
                    group["span_ids"].add(span_id)
                    group["earliest"] = min(group["earliest"], pos)

        doc_keys = sorted(doc_groups)
        fetch_requests = []
        for key in doc_keys:
            earliest = doc_groups[key]["earliest"]
            fetch_requests.append((key[0], earliest, config.snippet_window))
            fetch_requests.append((key[0], earliest, config.extended_window))
        fetched = self.engine.fetch_documents(fetch_requests)

        documents: list[DocumentHit] = []
        extended_texts: list[str] = []
        for i, key in enumerate(doc_keys):
            snippet, extended = fetched[2 * i], fetched[2 * i + 1]
            if not isinstance(snippet, DocumentSnippet) or not isinstance(extended, DocumentSnippet):
                continue  # document raced a takedown between sampling and fetch
            documents.append(DocumentHit(
                shard_id=key[0],
                doc_id=key[1],
                source=snippet.source,
                stage=snippet.stage,
                snippet=snippet.text,
                snippet_token_range=(snippet.window_begin, snippet.window_end),
                matched_span_ids=sorted(doc_groups[key]["span_ids"]),
            ))
            extended_texts.append(extended.text)

        if documents:
            documents = self.rerank_and_bucket(documents, extended_texts, prompt, response, config)

        # span relevance = max bucket among enclosing documents; drop orphans
        level = {name: i for i, name in enumerate(RELEVANCE_LEVELS)}
        best_level = [-1] * len(spans_out)
        for doc in documents:
            for span_id in doc.matched_span_ids:
                best_level[span_id] = max(best_level[span_id], level[doc.relevance])
        keep_ids = [i for i, lvl in enumerate(best_level) if lvl >= 0]
        remap = {old: new for new, old in enumerate(keep_ids)}
        final_spans = []
        for old_id in keep_ids:
            span = spans_out[old_id]
            span.relevance = RELEVANCE_LEVELS[best_level[old_id]]
            final_spans.append(span)
        final_docs = []
        adjacency = []
        for doc in documents:
            doc.matched_span_ids = sorted(remap[s] for s in doc.matched_span_ids if s in remap)
            if doc.matched_span_ids:
                final_docs.append(doc)
        for doc_id, doc in enumerate(final_docs):
            adjacency.extend((span_id, doc_id) for span_id in doc.matched_span_ids)
        adjacency.sort()

        stats = TraceStats(
            latency_ms=(time.perf_counter() - started) * 1000.0,
            probe_count=counters.probes,
            span_candidates=len(candidates),
            spans_kept=len(kept),
        )
        return TraceResult(
            spans=final_spans,
            documents=final_docs,
            adjacency=adjacency,
            stats=stats,
            span_texts=[response[char_offsets[s.begin]:char_offsets[s.end]] for s in final_spans],
            span_char_ranges=[(char_offsets[s.begin], char_offsets[s.end]) for s in final_spans],
        )

    def close(self) -> None:
        self._pool.shutdown(wait=False)
