"""Corpus ingestion: tokenize documents and write immutable index shards.

Shard directory layout (all integers little-endian):

    manifest.json   build metadata; written last as the commit marker
    tokens.bin      token stream, fixed-width IDs, one separator after each doc
    sa.bin          suffix array, 8-byte token positions
    docs.idx        8-byte token positions where each document begins
    meta.jsonl      one object per document: doc_id, source, stage
    unigram.json    token id -> occurrence count (separators excluded)

The index root additionally holds tokenizer.json (the classification
sidecar shared by all shards).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .tokenization import Tokenizer, sidecar_sha256

MANIFEST_VERSION = 1
STAGES = ("pretraining", "midtraining", "posttraining")
DEFAULT_SHARD_CAP = 10_000_000
MAX_SHARD_CAP = 500_000_000_000

TOKENIZER_FILE = "tokenizer.json"
MANIFEST_FILE = "manifest.json"
TOKENS_FILE = "tokens.bin"
SA_FILE = "sa.bin"
DOCS_FILE = "docs.idx"
META_FILE = "meta.jsonl"
UNIGRAM_FILE = "unigram.json"


class BuildError(Exception):
    """Ingestion cannot proceed (bad input or configuration)."""


class ShardLoadError(Exception):
    """Shard files are missing, truncated, or unparseable."""


def token_width_bytes(vocab_size: int) -> int:
    # separator = 2^(8w) - 1 must stay outside the vocabulary
    return 2 if vocab_size < 0xFFFF else 4

def separator_id(width: int) -> int:
    return (1 << (8 * width)) - 1

def token_dtype(width: int) -> np.dtype:
    return np.dtype("<u2") if width == 2 else np.dtype("<u4")


@dataclass
class DocumentRecord:
    """One corpus document; doc_id is assigned during ingestion."""

    text: str
    source: str = ""
    stage: str = "pretraining"
    doc_id: int = -1

    def __post_init__(self):
        if self.stage not in STAGES:
            raise BuildError(f"stage must be one of {STAGES}, got {self.stage!r}")


@dataclass
class BuildConfig:
    out_dir: Path
    shard_cap: int = DEFAULT_SHARD_CAP
    tokenizer: Tokenizer | None = None

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if not 1 < self.shard_cap <= MAX_SHARD_CAP:
            raise BuildError(f"shard_cap must be in (1, {MAX_SHARD_CAP}], got {self.shard_cap}")


@dataclass
class ShardInfo:
    path: Path
    manifest: dict

    @property
    def shard_id(self) -> int:
        return self.manifest["shard_id"]

    @property
    def num_tokens(self) -> int:
        return self.manifest["num_tokens"]

    @property
    def num_docs(self) -> int:
        return self.manifest["num_docs"]


@dataclass
class UnigramTable:
    """Corpus-wide token counts; backs span unigram probabilities."""

    counts: dict[int, int] = field(default_factory=dict)
    total: int = 0

    def log_prob(self, token_id: int) -> float:
        count = self.counts.get(token_id)
        if not count:
            raise KeyError(f"token id {token_id} absent from unigram table")
        return float(np.log(count) - np.log(self.total))


def build_suffix_array(tokens: np.ndarray) -> np.ndarray:
    """Sort all suffix start positions of a token sequence (prefix doubling).

    Returns positions as uint64. O(N log N) with numpy sorts; the test
    suite checks it against a quadratic sorter on small inputs.
    """
    tokens = np.asarray(tokens)
    n = int(tokens.size)
    if n == 0:
        raise BuildError("cannot build a suffix array over zero tokens")
    rank = tokens.astype(np.int64, copy=True)
    order = np.argsort(rank, kind="stable")
    rank = _dense_ranks(rank[order], None, order, n)
    k = 1
    while int(rank[order[-1]]) != n - 1:
        second = np.full(n, -1, dtype=np.int64)
        second[: n - k] = rank[k:]
        order = np.lexsort((second, rank))
        rank = _dense_ranks(rank[order], second[order], order, n)
        k *= 2
    return order.astype("<u8")


def _dense_ranks(primary: np.ndarray, secondary: np.ndarray | None, order: np.ndarray, n: int) -> np.ndarray:
    changed = np.empty(n, dtype=np.int64)
    changed[0] = 0
    if secondary is None:
        np.cumsum(primary[1:] != primary[:-1], out=changed[1:])
    else:
        np.cumsum((primary[1:] != primary[:-1]) | (secondary[1:] != secondary[:-1]), out=changed[1:])
    rank = np.empty(n, dtype=np.int64)
    rank[order] = changed
    return rank


def ingest(documents: Iterable[DocumentRecord], config: BuildConfig) -> list[ShardInfo]:
    """Tokenize documents and write self-contained index shards in order."""
    tokenizer = config.tokenizer or Tokenizer(mutable=True)
    token_docs = []
    for record in documents:
        ids = tokenizer.encode(record.text)
        token_docs.append((np.asarray(ids, dtype=np.int64), record.source, record.stage))
    return _write_index(token_docs, tokenizer, config)


def ingest_pretokenized(token_docs: Iterable[tuple[np.ndarray, str, str]],
                        tokenizer: Tokenizer, config: BuildConfig) -> list[ShardInfo]:
    """Ingest documents that are already token-ID sequences.

    Used for corpora tokenized out-of-process; the supplied tokenizer's
    sidecar is written as-is and every ID must fall inside its vocabulary.
    """
    prepared = []
    for tokens, source, stage in token_docs:
        arr = np.asarray(tokens, dtype=np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= tokenizer.vocab_size):
            raise BuildError("pretokenized document contains IDs outside the vocabulary")
        prepared.append((arr, source, stage))
    return _write_index(prepared, tokenizer, config)


def _write_index(token_docs, tokenizer: Tokenizer, config: BuildConfig) -> list[ShardInfo]:
    if not token_docs:
        raise BuildError("corpus is empty: at least one document is required")
    for i, (tokens, source, _) in enumerate(token_docs):
        if tokens.size + 1 > config.shard_cap:
            name = source or f"document #{i}"
            raise BuildError(
                f"{name} needs {tokens.size + 1} tokens (incl. separator), exceeding shard cap {config.shard_cap}")

    root = config.out_dir
    root.mkdir(parents=True, exist_ok=True)
    tokenizer.save_sidecar(root / TOKENIZER_FILE)
    tok_hash = sidecar_sha256(root / TOKENIZER_FILE)

    width = token_width_bytes(tokenizer.vocab_size)
    shards = []
    for shard_id, group in enumerate(_pack(token_docs, config.shard_cap)):
        shards.append(_write_shard(root, shard_id, group, tokenizer.vocab_size, width, tok_hash))
    return shards


def _pack(token_docs, cap: int) -> Iterator[list]:
    group, used = [], 0
    for doc in token_docs:
        need = doc[0].size + 1
        if group and used + need > cap:
            yield group
            group, used = [], 0
        group.append(doc)
        used += need
    if group:
        yield group


def _write_shard(root: Path, shard_id: int, docs, vocab_size: int, width: int, tok_hash: str) -> ShardInfo:
    sep = separator_id(width)
    num_docs = len(docs)
    n = sum(d[0].size for d in docs) + num_docs

    stream = np.empty(n, dtype=np.int64)
    offsets = np.empty(num_docs, dtype="<u8")
    pos = 0
    for i, (tokens, _, _) in enumerate(docs):
        offsets[i] = pos
        stream[pos:pos + tokens.size] = tokens
        stream[pos + tokens.size] = sep
        pos += tokens.size + 1

    sa = build_suffix_array(stream)
    body = stream[stream != sep]
    counts = np.bincount(body, minlength=0)

    shard_dir = root / f"shard_{shard_id:05d}"
    shard_dir.mkdir(parents=True, exist_ok=True)
    stream.astype(token_dtype(width)).tofile(shard_dir / TOKENS_FILE)
    sa.tofile(shard_dir / SA_FILE)
    offsets.tofile(shard_dir / DOCS_FILE)
    with open(shard_dir / META_FILE, "w", encoding="utf-8") as f:
        for i, (_, source, stage) in enumerate(docs):
            f.write(json.dumps({"doc_id": i, "source": source, "stage": stage},
                               ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n")
    unigram = {str(t): int(c) for t, c in enumerate(counts) if c > 0}
    with open(shard_dir / UNIGRAM_FILE, "w", encoding="utf-8") as f:
        json.dump(unigram, f, sort_keys=True, separators=(",", ":"))

    manifest = {
        "version": MANIFEST_VERSION,
        "shard_id": shard_id,
        "token_width_bytes": width,
        "num_tokens": int(n),
        "num_docs": num_docs,
        "vocab_size": vocab_size,
        "tokenizer_sha256": tok_hash,
    }
    with open(shard_dir / MANIFEST_FILE, "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, separators=(",", ":"))
    return ShardInfo(shard_dir, manifest)


def shard_dirs(index_root: Path) -> list[Path]:
    return sorted(p for p in Path(index_root).iterdir() if p.is_dir() and p.name.startswith("shard_"))


def load_manifest(shard_dir: Path) -> dict:
    path = Path(shard_dir) / MANIFEST_FILE
    try:
        with open(path, encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise ShardLoadError(f"{path} is missing (shard not committed?)") from e
    except json.JSONDecodeError as e:
        raise ShardLoadError(f"{path} is not valid JSON: {e}") from e
    for key in ("version", "shard_id", "token_width_bytes", "num_tokens", "num_docs",
                "vocab_size", "tokenizer_sha256"):
        if key not in manifest:
            raise ShardLoadError(f"{path} lacks required field {key!r}")
    return manifest


def compute_unigram_table(shard_paths: Iterable[Path]) -> UnigramTable:
    """Sum per-shard unigram counts; all shards must share one tokenizer."""
    table = UnigramTable()
    tok_hash = None
    for shard_dir in shard_paths:
        manifest = load_manifest(shard_dir)
        if tok_hash is None:
            tok_hash = manifest["tokenizer_sha256"]
        elif manifest["tokenizer_sha256"] != tok_hash:
            raise ShardLoadError(f"{shard_dir} was built with a different tokenizer (hash mismatch)")
        try:
            with open(Path(shard_dir) / UNIGRAM_FILE, encoding="utf-8") as f:
                counts = json.load(f)
        except (FileNotFoundError, json.JSONDecodeError) as e:
            raise ShardLoadError(f"unigram counts unreadable in {shard_dir}: {e}") from e
        for key, count in counts.items():
            token_id = int(key)
            table.counts[token_id] = table.counts.get(token_id, 0) + int(count)
            table.total += int(count)
    return table


@dataclass
class ValidationCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    shard: str
    checks: list[ValidationCheck] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(ValidationCheck(name, bool(passed), detail))

    def failures(self) -> list[ValidationCheck]:
        return [c for c in self.checks if not c.passed]


def validate_shard(shard_dir: Path) -> ValidationReport:
    """Check every shard invariant; unreadable files raise ShardLoadError."""
    shard_dir = Path(shard_dir)
    manifest = load_manifest(shard_dir)
    report = ValidationReport(shard=shard_dir.name)

    width = manifest["token_width_bytes"]
    n, num_docs = manifest["num_tokens"], manifest["num_docs"]
    for fname in (TOKENS_FILE, SA_FILE, DOCS_FILE, META_FILE, UNIGRAM_FILE):
        if not (shard_dir / fname).exists():
            raise ShardLoadError(f"{shard_dir / fname} is missing")

    report.add("token-file-size", os.path.getsize(shard_dir / TOKENS_FILE) == n * width,
               f"expected {n * width} bytes")
    report.add("sa-file-size", os.path.getsize(shard_dir / SA_FILE) == n * 8,
               f"expected {n * 8} bytes")
    report.add("docs-file-size", os.path.getsize(shard_dir / DOCS_FILE) == num_docs * 8,
               f"expected {num_docs * 8} bytes")
    if not report.ok:
        return report

    tokens = np.fromfile(shard_dir / TOKENS_FILE, dtype=token_dtype(width)).astype(np.int64)
    sa = np.fromfile(shard_dir / SA_FILE, dtype="<u8").astype(np.int64)
    offsets = np.fromfile(shard_dir / DOCS_FILE, dtype="<u8").astype(np.int64)
    sep = separator_id(width)

    report.add("doc-offsets-start", num_docs > 0 and offsets[0] == 0, "first document must start at 0")
    report.add("doc-offsets-increasing", bool(np.all(np.diff(offsets) > 0)))
    report.add("doc-offsets-range", bool(np.all(offsets < n)))

    sep_positions = np.nonzero(tokens == sep)[0]
    expected_seps = np.concatenate([offsets[1:] - 1, [n - 1]]) if num_docs else np.array([], dtype=np.int64)
    report.add("separators", sep_positions.size == num_docs and bool(np.array_equal(sep_positions, expected_seps)),
               "one separator must terminate each document")

    body = tokens[tokens != sep]
    report.add("vocab-range", body.size == 0 or int(body.max()) < manifest["vocab_size"],
               "token IDs must stay below vocab_size")

    report.add("sa-permutation", sa.size == n and bool(np.all(np.bincount(sa, minlength=n) == 1)))
    if report.checks[-1].passed and n > 0:
        report.add("sa-sorted", _sa_in_order(tokens, sa), "adjacent suffixes out of order")
    else:
        report.add("sa-sorted", False, "skipped: suffix array is not a permutation")

    with open(shard_dir / META_FILE, encoding="utf-8") as f:
        meta_lines = sum(1 for line in f if line.strip())
    report.add("meta-lines", meta_lines == num_docs, f"expected {num_docs} metadata lines")

    try:
        with open(shard_dir / UNIGRAM_FILE, encoding="utf-8") as f:
            unigram = json.load(f)
    except json.JSONDecodeError as e:
        raise ShardLoadError(f"unigram.json unparseable: {e}") from e
    actual = np.bincount(body, minlength=0) if body.size else np.array([], dtype=np.int64)
    expected = {str(t): int(c) for t, c in enumerate(actual) if c > 0}
    report.add("unigram-counts", {k: int(v) for k, v in unigram.items()} == expected)
    report.add("unigram-sum", sum(int(v) for v in unigram.values()) == n - num_docs,
               "counts must sum to num_tokens - num_docs")
    return report


def _sa_in_order(tokens: np.ndarray, sa: np.ndarray) -> bool:
    """Linear-time suffix order verification via inverse ranks.

    For a permutation, adjacent suffixes are ordered iff their first tokens
    are ordered or, on ties, the ranks of the remainder suffixes are
    (treating the empty suffix as smallest).
    """
    n = tokens.size
    if n <= 1:
        return True
    rank_ext = np.empty(n + 1, dtype=np.int64)
    rank_ext[sa] = np.arange(n, dtype=np.int64)
    rank_ext[n] = -1
    a, b = sa[:-1], sa[1:]
    first_a, first_b = tokens[a], tokens[b]
    lt = first_a < first_b
    eq = first_a == first_b
    tie_ok = rank_ext[a + 1] < rank_ext[b + 1]
    return bool(np.all(lt | (eq & tie_ok)))
