"""Disk-backed query engine over index shards.

Shard files are memory-mapped and touched by on-demand random reads; no
file is loaded wholesale. Suffix comparisons run on big-endian byte
prefixes (byte order preserves unsigned token order), so each binary
search probe costs one suffix-array read plus one token-stream read --
accounted as 2 disk reads by the instrumentation counters.

All query operations are read-only and safe under unbounded concurrency.
Takedown maintains a journal-backed exclusion set swapped atomically, so
in-flight queries see either the old or new set, never a partial one.
"""

from __future__ import annotations

import json
import mmap
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .index_builder import (
    DOCS_FILE,
    META_FILE,
    SA_FILE,
    TOKENIZER_FILE,
    TOKENS_FILE,
    ShardLoadError,
    UnigramTable,
    compute_unigram_table,
    load_manifest,
    separator_id,
    shard_dirs,
    token_dtype,
)
from .tokenization import Tokenizer

TAKEDOWN_JOURNAL = "takedown.journal"


class QueryError(ValueError):
    """Caller violated a query precondition."""


class UnknownDocumentError(Exception):
    """take_down received document IDs that do not exist.

    Known entries listed in `ack` were still applied.
    """

    def __init__(self, unknown: list[tuple[int, int]], ack: "TakedownAck"):
        super().__init__(f"unknown documents: {unknown}")
        self.unknown = unknown
        self.ack = ack


@dataclass(frozen=True)
class SaSegment:
    """Contiguous run of suffix-array ranks whose suffixes start with a query."""

    shard_id: int
    lo: int
    hi: int

    @property
    def count(self) -> int:
        return self.hi - self.lo


@dataclass
class PrefixMatch:
    """Longest matching prefix of a query suffix, maxed over shards.

    `segments` holds the SA segment per shard for shards that matched the
    full prefix directly; when the length came from neighbor inspection
    the segment is located by a later find (see locate_occurrences).
    """

    length: int
    segments: dict[int, SaSegment] = field(default_factory=dict)


@dataclass
class ProbeCounters:
    """Instrumentation: binary-search probes, disk reads, find calls."""

    probes: int = 0
    disk_reads: int = 0
    finds: int = 0
    finds_by_shard: dict[int, int] = field(default_factory=dict)

    def bump_find(self, shard_id: int, probes: int, disk_reads: int) -> None:
        self.probes += probes
        self.disk_reads += disk_reads
        self.finds += 1
        self.finds_by_shard[shard_id] = self.finds_by_shard.get(shard_id, 0) + 1

    def merge(self, other: "ProbeCounters") -> None:
        self.probes += other.probes
        self.disk_reads += other.disk_reads
        self.finds += other.finds
        for k, v in other.finds_by_shard.items():
            self.finds_by_shard[k] = self.finds_by_shard.get(k, 0) + v


@dataclass
class DocumentSnippet:
    shard_id: int
    doc_id: int
    source: str
    stage: str
    text: str
    window_begin: int  # doc-relative token offsets, half-open
    window_end: int
    center: int  # doc-relative token position of the request
    doc_num_tokens: int


@dataclass
class FetchError:
    shard_id: int
    position: int
    message: str


@dataclass
class TakedownAck:
    applied: int = 0
    already_present: int = 0
    unknown: list[tuple[int, int]] = field(default_factory=list)


class ShardReader:
    """Read-only view of one shard: memory-mapped token stream and SA."""

    def __init__(self, shard_path: Path, tokenizer: Tokenizer):
        self.path = Path(shard_path)
        self.manifest = load_manifest(self.path)
        width = self.manifest["token_width_bytes"]
        self.shard_id = self.manifest["shard_id"]
        self.num_tokens = self.manifest["num_tokens"]
        self.num_docs = self.manifest["num_docs"]
        self.width = width
        self.separator = separator_id(width)
        self.dtype = token_dtype(width)
        self._tokenizer = tokenizer
        for fname, expected in ((TOKENS_FILE, self.num_tokens * width),
                                (SA_FILE, self.num_tokens * 8),
                                (DOCS_FILE, self.num_docs * 8)):
            actual = (self.path / fname).stat().st_size if (self.path / fname).exists() else -1
            if actual != expected:
                raise ShardLoadError(f"{self.path.name}/{fname}: size {actual}, expected {expected}")
        # raw maps for the probe hot path (ndarray slicing is too slow there)
        self._tok_file = open(self.path / TOKENS_FILE, "rb")
        self._sa_file = open(self.path / SA_FILE, "rb")
        self._tok_buf = mmap.mmap(self._tok_file.fileno(), 0, access=mmap.ACCESS_READ)
        self._sa_buf = mmap.mmap(self._sa_file.fileno(), 0, access=mmap.ACCESS_READ)
        self.tokens = np.frombuffer(self._tok_buf, dtype=self.dtype)
        self.sa = np.frombuffer(self._sa_buf, dtype="<u8")
        self.doc_offsets = np.fromfile(self.path / DOCS_FILE, dtype="<u8").astype(np.int64)
        self.meta = self._load_meta()

    def _load_meta(self) -> list[dict]:
        meta = []
        with open(self.path / META_FILE, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    meta.append(json.loads(line))
        if len(meta) != self.num_docs:
            raise ShardLoadError(f"{self.path.name}/{META_FILE}: {len(meta)} entries, expected {self.num_docs}")
        return meta

    def prepare_query(self, query) -> np.ndarray:
        """Validate a query and return it as the shard's token dtype."""
        q = np.ascontiguousarray(query, dtype=np.int64)
        if q.size == 0:
            raise QueryError("find requires a non-empty query")
        if int(q.min()) < 0 or int(q.max()) >= self.separator:
            raise QueryError("query contains the separator ID or an out-of-range token")
        return q.astype(self.dtype)

    def _suffix_cmp(self, pos: int, q0: int, q: np.ndarray, qlen: int) -> int:
        # -1: suffix < query, 0: suffix starts with query, +1: suffix > query.
        # The first token decides almost every probe; compare it as a plain
        # int before paying for a vectorized prefix comparison.
        t0 = int(self.tokens[pos])
        if t0 != q0:
            return -1 if t0 < q0 else 1
        avail = self.num_tokens - pos
        m = qlen if qlen < avail else avail
        if m > 1:
            seg = self.tokens[pos:pos + m]
            neq = seg != q[:m]
            i = int(np.argmax(neq))
            if bool(neq[i]):
                return -1 if int(seg[i]) < int(q[i]) else 1
        return 0 if m == qlen else -1

    def find_prepared(self, q: np.ndarray, counters: ProbeCounters | None = None) -> SaSegment:
        sa, n = self.sa, self.num_tokens
        cmp = self._suffix_cmp
        qlen = int(q.size)
        q0 = int(q[0])
        probes = 0
        lo, hi = 0, n
        while lo < hi:
            mid = (lo + hi) >> 1
            probes += 1
            if cmp(int(sa[mid]), q0, q, qlen) < 0:
                lo = mid + 1
            else:
                hi = mid
        start = lo
        lo, hi = start, n
        while lo < hi:
            mid = (lo + hi) >> 1
            probes += 1
            if cmp(int(sa[mid]), q0, q, qlen) <= 0:
                lo = mid + 1
            else:
                hi = mid
        if counters is not None:
            counters.bump_find(self.shard_id, probes, 2 * probes)
        return SaSegment(self.shard_id, start, lo)

    def find(self, query, counters: ProbeCounters | None = None) -> SaSegment:
        return self.find_prepared(self.prepare_query(query), counters)

    def longest_prefix_len(self, suffix, counters: ProbeCounters | None = None) -> tuple[int, SaSegment | None]:
        """Length of the longest prefix of `suffix` occurring in this shard.

        Issues exactly one find. On an empty segment the lexicographic
        neighbors at the insertion point bound the longest common prefix.
        """
        return self.longest_prefix_prepared(self.prepare_query(suffix), counters)

    def longest_prefix_prepared(self, q: np.ndarray,
                                counters: ProbeCounters | None = None) -> tuple[int, SaSegment | None]:
        seg = self.find_prepared(q, counters)
        if seg.count > 0:
            return int(q.size), seg
        p = seg.lo
        n = self.num_tokens
        best = 0
        ranks = {min(max(p - 1, 0), n - 1), min(p, n - 1)}
        for rank in ranks:
            pos = int(self.sa[rank])
            best = max(best, self._lcp(pos, q))
            if counters is not None:
                counters.disk_reads += 2
        return best, None

    def _lcp(self, pos: int, q: np.ndarray) -> int:
        m = min(int(q.size), self.num_tokens - pos)
        if m <= 0:
            return 0
        seg = self.tokens[pos:pos + m]
        neq = seg != q[:m]
        idx = int(np.argmax(neq))
        return idx if bool(neq[idx]) else m

    def segment_positions(self, seg: SaSegment, counters: ProbeCounters | None = None) -> np.ndarray:
        if counters is not None:
            counters.disk_reads += max(seg.count, 0)
        return np.asarray(self.sa[seg.lo:seg.hi], dtype=np.int64)

    def close(self) -> None:
        self.tokens = None
        self.sa = None
        try:
            self._tok_buf.close()
            self._sa_buf.close()
        except BufferError:
            pass  # a caller still holds a view; the GC will reap the maps
        self._tok_file.close()
        self._sa_file.close()

    def doc_index_of(self, position: int) -> int:
        return int(np.searchsorted(self.doc_offsets, position, side="right")) - 1

    def doc_bounds(self, doc_id: int) -> tuple[int, int]:
        """Token range of a document, excluding its trailing separator."""
        start = int(self.doc_offsets[doc_id])
        if doc_id + 1 < self.num_docs:
            end = int(self.doc_offsets[doc_id + 1]) - 1
        else:
            end = self.num_tokens - 1
        return start, end

    def doc_indices_of(self, positions: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.doc_offsets, positions, side="right") - 1

    def window(self, position: int, window: int) -> tuple[int, int, int]:
        """Token window of `window` tokens around a position, clipped and
        shifted to stay inside the enclosing document. Returns (doc_id,
        begin, end) in absolute token positions."""
        doc_id = self.doc_index_of(position)
        start, end = self.doc_bounds(doc_id)
        lo = position - window // 2
        hi = lo + window
        if lo < start:
            lo = start
            hi = min(start + window, end)
        elif hi > end:
            hi = end
            lo = max(end - window, start)
        return doc_id, lo, hi

    def decode_range(self, begin: int, end: int) -> str:
        ids = np.asarray(self.tokens[begin:end], dtype=np.int64)
        return self._tokenizer.decode(int(t) for t in ids)


class SearchEngine:
    """Multi-shard query engine with takedown filtering and instrumentation."""

    def __init__(self, index_root: Path, fetch_parallelism: int = 8):
        self.root = Path(index_root)
        sidecar = self.root / TOKENIZER_FILE
        if not sidecar.exists():
            raise ShardLoadError(f"{sidecar} is missing")
        self.tokenizer = Tokenizer.load_sidecar(sidecar)
        paths = shard_dirs(self.root)
        if not paths:
            raise ShardLoadError(f"no shards found under {self.root}")
        self.shards: list[ShardReader] = [ShardReader(p, self.tokenizer) for p in paths]
        self.unigrams: UnigramTable = compute_unigram_table(paths)
        self.separator = self.shards[0].separator
        self._cum = ProbeCounters()
        self._cum_lock = threading.Lock()
        self._takedown_lock = threading.Lock()
        self._taken: frozenset[tuple[int, int]] = frozenset()
        self._taken_by_shard: dict[int, np.ndarray] = {}
        self._journal = self.root / TAKEDOWN_JOURNAL
        self._replay_journal()
        self._pool = ThreadPoolExecutor(max_workers=max(1, fetch_parallelism),
                                        thread_name_prefix="tracescope-fetch")

    # -- instrumentation ----------------------------------------------------

    def _flush(self, counters: ProbeCounters) -> None:
        with self._cum_lock:
            self._cum.merge(counters)

    def probe_count(self) -> ProbeCounters:
        """Cumulative probe/disk-read/find counters since the last reset."""
        with self._cum_lock:
            snap = ProbeCounters(self._cum.probes, self._cum.disk_reads, self._cum.finds,
                                 dict(self._cum.finds_by_shard))
        return snap

    def reset_counters(self) -> None:
        with self._cum_lock:
            self._cum = ProbeCounters()

    # -- queries ------------------------------------------------------------

    @property
    def num_tokens(self) -> int:
        return sum(s.num_tokens for s in self.shards)

    def shard(self, shard_id: int) -> ShardReader:
        if not 0 <= shard_id < len(self.shards):
            raise QueryError(f"unknown shard {shard_id}")
        return self.shards[shard_id]

    def find(self, query, shard_id: int, counters: ProbeCounters | None = None) -> SaSegment:
        local = counters if counters is not None else ProbeCounters()
        seg = self.shard(shard_id).find(query, local)
        if counters is None:
            self._flush(local)
        return seg

    def longest_prefix_len(self, suffix, counters: ProbeCounters | None = None) -> PrefixMatch:
        """Max over shards of the longest matching prefix; one find per shard."""
        local = counters if counters is not None else ProbeCounters()
        q = self.shards[0].prepare_query(suffix)
        best = 0
        segments: dict[int, SaSegment] = {}
        lengths: dict[int, SaSegment | None] = {}
        for shard in self.shards:
            length, seg = shard.longest_prefix_prepared(q, local)
            if length > best:
                best = length
                lengths = {shard.shard_id: seg}
            elif length == best and best > 0:
                lengths[shard.shard_id] = seg
        for sid, seg in lengths.items():
            if seg is not None:
                segments[sid] = seg
        if counters is None:
            self._flush(local)
        return PrefixMatch(best, segments)

    def locate_occurrences(self, query, shard_id: int, limit: int, rng_seed: int,
                           counters: ProbeCounters | None = None) -> list[int]:
        """Positions of a query in one shard, excluding taken-down documents.

        All positions when at most `limit` survive; otherwise a seeded
        uniform sample of exactly `limit`, ascending either way.
        """
        local = counters if counters is not None else ProbeCounters()
        shard = self.shard(shard_id)
        seg = shard.find(query, local)
        if seg.count == 0:
            if counters is None:
                self._flush(local)
            raise QueryError(f"query does not occur in shard {shard_id}")
        positions = self._surviving_positions(shard, seg, local)
        if counters is None:
            self._flush(local)
        if limit <= 0:
            return []
        if positions.size > limit:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(rng_seed)))
            chosen = rng.choice(positions.size, size=limit, replace=False)
            positions = positions[np.sort(chosen)]
        return [int(p) for p in positions]

    def _surviving_positions(self, shard: ShardReader, seg: SaSegment,
                             counters: ProbeCounters | None) -> np.ndarray:
        positions = np.sort(shard.segment_positions(seg, counters))
        taken = self._taken_by_shard.get(shard.shard_id)
        if taken is not None and taken.size and positions.size:
            doc_idx = shard.doc_indices_of(positions)
            positions = positions[~np.isin(doc_idx, taken)]
        return positions

    def fetch_documents(self, requests: list[tuple[int, int, int]]):
        """Resolve (shard_id, position, window) snippets concurrently.

        Output order matches input order; a bad request yields a
        FetchError entry and the rest of the batch proceeds.
        """
        futures = [self._pool.submit(self._fetch_one, sid, pos, win) for sid, pos, win in requests]
        return [f.result() for f in futures]

    def _fetch_one(self, shard_id: int, position: int, window: int):
        if not 0 <= shard_id < len(self.shards):
            return FetchError(shard_id, position, f"unknown shard {shard_id}")
        shard = self.shards[shard_id]
        if not 0 <= position < shard.num_tokens:
            return FetchError(shard_id, position, "position out of range")
        if int(shard.tokens[position]) == shard.separator:
            return FetchError(shard_id, position, "position is a document separator")
        if window <= 0:
            return FetchError(shard_id, position, "window must be positive")
        doc_id, lo, hi = shard.window(position, window)
        if (shard_id, doc_id) in self._taken:
            return FetchError(shard_id, position, f"document {shard_id}:{doc_id} has been taken down")
        meta = shard.meta[doc_id]
        start, end = shard.doc_bounds(doc_id)
        return DocumentSnippet(
            shard_id=shard_id,
            doc_id=doc_id,
            source=meta.get("source", ""),
            stage=meta.get("stage", "pretraining"),
            text=shard.decode_range(lo, hi),
            window_begin=lo - start,
            window_end=hi - start,
            center=position - start,
            doc_num_tokens=end - start,
        )

    # -- takedown -----------------------------------------------------------

    def is_taken_down(self, shard_id: int, doc_id: int) -> bool:
        return (shard_id, doc_id) in self._taken

    def take_down(self, docs: list[tuple[int, int]]) -> TakedownAck:
        """Exclude documents from all future results without touching index files.

        Persists to an append-only journal replayed at startup. Unknown IDs
        raise UnknownDocumentError after the known ones are applied.
        """
        ack = TakedownAck()
        valid = []
        for shard_id, doc_id in docs:
            if 0 <= shard_id < len(self.shards) and 0 <= doc_id < self.shards[shard_id].num_docs:
                valid.append((int(shard_id), int(doc_id)))
            else:
                ack.unknown.append((shard_id, doc_id))
        with self._takedown_lock:
            current = self._taken
            fresh = [d for d in valid if d not in current]
            ack.applied = len(fresh)
            ack.already_present = len(valid) - len(fresh)
            if fresh:
                with open(self._journal, "a", encoding="utf-8") as f:
                    for shard_id, doc_id in fresh:
                        f.write(f"{shard_id} {doc_id}\n")
                    f.flush()
                self._install_takedown(current | set(fresh))
        if ack.unknown:
            raise UnknownDocumentError(ack.unknown, ack)
        return ack

    def _install_takedown(self, entries: frozenset | set) -> None:
        by_shard: dict[int, list[int]] = {}
        for shard_id, doc_id in entries:
            by_shard.setdefault(shard_id, []).append(doc_id)
        table = {sid: np.asarray(sorted(ids), dtype=np.int64) for sid, ids in by_shard.items()}
        # single reference assignments: readers see old or new, never partial
        self._taken_by_shard = table
        self._taken = frozenset(entries)

    def _replay_journal(self) -> None:
        if not self._journal.exists():
            return
        entries = set()
        with open(self._journal, encoding="utf-8") as f:
            for line in f:
                parts = line.split()
                if len(parts) == 2:
                    entries.add((int(parts[0]), int(parts[1])))
        if entries:
            self._install_takedown(entries)

    def close(self) -> None:
        self._pool.shutdown(wait=True)
        for shard in self.shards:
            shard.close()
