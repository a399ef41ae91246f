"""Text <-> token-ID conversion and per-token classification.

The engine is vocabulary-agnostic: every index carries a ``tokenizer.json``
sidecar mapping each token ID to its decoded text plus two boolean flags
(begin-of-word, delimiter). Matching happens purely in ID space, so the
query path never needs the original tokenizer's merge rules.

Two tokenizer kinds are supported:

* ``default`` -- a lossless rule-based tokenizer: maximal runs of
  (optional single leading space)(letters/digits), or a single character
  for anything else. IDs are assigned first-come-first-served at build
  time and frozen in the sidecar.
* ``external`` -- an arbitrary vocabulary supplied as a sidecar; text is
  encoded by greedy longest match against the vocabulary's decoded texts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

SIDECAR_VERSION = 1
KIND_DEFAULT = "default"
KIND_EXTERNAL = "external"


class TokenizerError(Exception):
    """Base class for tokenizer failures."""


class UnknownTokenError(TokenizerError):
    """A token ID has no entry in the classification table."""


class UnknownPieceError(TokenizerError):
    """A text piece is not in a frozen vocabulary."""


def is_delimiter_text(text: str) -> bool:
    """A delimiter is a period token or any token containing a newline."""
    return text == "." or "\n" in text


def segment_default(text: str) -> list[str]:
    """Split text into default-tokenizer pieces.

    A piece is either a maximal run of alphanumeric characters with an
    optional single leading space, or a single non-alphanumeric character.
    Pieces concatenate back to the input exactly.
    """
    pieces: list[str] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == " " and i + 1 < n and text[i + 1].isalnum():
            j = i + 2
            while j < n and text[j].isalnum():
                j += 1
            pieces.append(text[i:j])
            i = j
        elif ch.isalnum():
            j = i + 1
            while j < n and text[j].isalnum():
                j += 1
            pieces.append(text[i:j])
            i = j
        else:
            pieces.append(ch)
            i += 1
    return pieces


@dataclass
class TokenClassTable:
    """Per-ID token classification: decoded text, begin-of-word, delimiter.

    Immutable once an index is built; `Tokenizer` only appends entries
    while constructing a new vocabulary.
    """

    texts: list[str] = field(default_factory=list)
    begin_of_word: list[bool] = field(default_factory=list)
    delimiter: list[bool] = field(default_factory=list)

    @property
    def vocab_size(self) -> int:
        return len(self.texts)

    def classify(self, token_id: int) -> tuple[bool, bool]:
        """Return (begin_of_word, delimiter) for a valid token ID."""
        if not 0 <= token_id < len(self.texts):
            raise UnknownTokenError(f"token id {token_id} out of range (vocab_size={len(self.texts)})")
        return self.begin_of_word[token_id], self.delimiter[token_id]

    def decode_token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.texts):
            raise UnknownTokenError(f"token id {token_id} out of range (vocab_size={len(self.texts)})")
        return self.texts[token_id]

    def add(self, text: str) -> int:
        """Append a new entry with flags derived from the default rules."""
        token_id = len(self.texts)
        self.texts.append(text)
        self.begin_of_word.append(text.startswith(" "))
        self.delimiter.append(is_delimiter_text(text))
        return token_id

    def to_sidecar(self, kind: str) -> dict:
        return {
            "version": SIDECAR_VERSION,
            "kind": kind,
            "vocab_size": len(self.texts),
            "tokens": [
                {
                    "id": i,
                    "text": self.texts[i],
                    "begin_of_word": self.begin_of_word[i],
                    "delimiter": self.delimiter[i],
                }
                for i in range(len(self.texts))
            ],
        }


class Tokenizer:
    """Encoder/decoder bound to a TokenClassTable.

    ``mutable=True`` lets encode() grow the vocabulary (build time). A
    frozen tokenizer raises UnknownPieceError for unseen pieces; use
    session() at query time to absorb them as transient IDs instead.
    """

    def __init__(self, table: TokenClassTable | None = None, kind: str = KIND_DEFAULT,
                 mutable: bool = False):
        if kind not in (KIND_DEFAULT, KIND_EXTERNAL):
            raise TokenizerError(f"unknown tokenizer kind {kind!r}")
        self.table = table if table is not None else TokenClassTable()
        self.kind = kind
        self.mutable = mutable
        self._ids: dict[str, int] = {}
        for i, text in enumerate(self.table.texts):
            self._ids.setdefault(text, i)
        # external kind: longest-match candidates grouped by first character
        self._by_first: dict[str, list[str]] | None = None

    @property
    def vocab_size(self) -> int:
        return self.table.vocab_size

    def _candidates(self) -> dict[str, list[str]]:
        if self._by_first is None:
            by_first: dict[str, list[str]] = {}
            for text in self._ids:
                if text:
                    by_first.setdefault(text[0], []).append(text)
            for texts in by_first.values():
                texts.sort(key=len, reverse=True)
            self._by_first = by_first
        return self._by_first

    def segment(self, text: str) -> list[str]:
        """Split text into vocabulary pieces (unknown chars stay single)."""
        if self.kind == KIND_DEFAULT:
            return segment_default(text)
        by_first = self._candidates()
        pieces = []
        i, n = 0, len(text)
        while i < n:
            match = None
            for cand in by_first.get(text[i], ()):
                if text.startswith(cand, i):
                    match = cand
                    break
            if match is None:
                match = text[i]
            pieces.append(match)
            i += len(match)
        return pieces

    def encode(self, text: str) -> list[int]:
        """Tokenize text to IDs; deterministic for a fixed vocabulary."""
        ids = []
        for piece in self.segment(text):
            token_id = self._ids.get(piece)
            if token_id is None:
                if not self.mutable:
                    raise UnknownPieceError(f"piece {piece!r} not in frozen vocabulary")
                token_id = self.table.add(piece)
                self._ids[piece] = token_id
                self._by_first = None
            ids.append(token_id)
        return ids

    def decode(self, ids) -> str:
        return "".join(self.table.decode_token(t) for t in ids)

    def classify(self, token_id: int) -> tuple[bool, bool]:
        return self.table.classify(token_id)

    def word_starts(self, ids) -> list[bool]:
        """Positional begin-of-word flags for a token sequence.

        Position k starts a word iff its token carries the begin-of-word
        flag, or k == 0, or the previous token's text ends with a newline.
        """
        flags = []
        prev_text = None
        for k, token_id in enumerate(ids):
            bow = self.table.begin_of_word[token_id] if 0 <= token_id < self.table.vocab_size else False
            if k == 0 or (prev_text is not None and prev_text.endswith("\n")):
                bow = True
            flags.append(bow)
            prev_text = self.table.decode_token(token_id)
        return flags

    def session(self, max_token_id: int | None = None) -> "QuerySession":
        return QuerySession(self, max_token_id)

    def save_sidecar(self, path) -> None:
        payload = self.table.to_sidecar(self.kind)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=False, sort_keys=True, indent=None, separators=(",", ":"))

    @classmethod
    def load_sidecar(cls, path) -> "Tokenizer":
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
        if payload.get("version") != SIDECAR_VERSION:
            raise TokenizerError(f"unsupported tokenizer sidecar version {payload.get('version')!r}")
        entries = payload["tokens"]
        if len(entries) != payload["vocab_size"]:
            raise TokenizerError("tokenizer sidecar vocab_size does not match entry count")
        table = TokenClassTable()
        by_id = sorted(entries, key=lambda e: e["id"])
        for i, entry in enumerate(by_id):
            if entry["id"] != i:
                raise TokenizerError("tokenizer sidecar ids are not dense")
            table.texts.append(entry["text"])
            table.begin_of_word.append(bool(entry["begin_of_word"]))
            table.delimiter.append(bool(entry["delimiter"]))
        kind = payload.get("kind", KIND_EXTERNAL)
        return cls(table, kind=kind, mutable=False)


def sidecar_sha256(path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


class QuerySession:
    """Per-request tokenizer view that absorbs out-of-vocabulary pieces.

    Unseen pieces get transient IDs starting at the frozen vocab_size; they
    can never equal a corpus token, so they simply never match. Transient
    IDs exist only for the lifetime of the session.
    """

    def __init__(self, base: Tokenizer, max_token_id: int | None = None):
        self._base = base
        self._max = max_token_id
        self._overlay_ids: dict[str, int] = {}
        self._overlay_texts: list[str] = []

    @property
    def base_vocab_size(self) -> int:
        return self._base.vocab_size

    def encode(self, text: str) -> list[int]:
        ids = []
        base = self._base
        for piece in base.segment(text):
            token_id = base._ids.get(piece)
            if token_id is None:
                token_id = self._overlay_ids.get(piece)
                if token_id is None:
                    token_id = base.vocab_size + len(self._overlay_texts)
                    if self._max is not None and token_id >= self._max:
                        raise TokenizerError("query vocabulary overflow (too many unseen pieces)")
                    self._overlay_ids[piece] = token_id
                    self._overlay_texts.append(piece)
            ids.append(token_id)
        return ids

    def decode_token(self, token_id: int) -> str:
        if token_id >= self._base.vocab_size:
            k = token_id - self._base.vocab_size
            if k < len(self._overlay_texts):
                return self._overlay_texts[k]
        return self._base.table.decode_token(token_id)

    def decode(self, ids) -> str:
        return "".join(self.decode_token(t) for t in ids)

    def is_delimiter(self, token_id: int) -> bool:
        if token_id >= self._base.vocab_size:
            return is_delimiter_text(self.decode_token(token_id))
        return self._base.table.delimiter[token_id]

    def word_starts(self, ids) -> list[bool]:
        flags = []
        prev_text = None
        for k, token_id in enumerate(ids):
            text = self.decode_token(token_id)
            bow = text.startswith(" ")
            if k == 0 or (prev_text is not None and prev_text.endswith("\n")):
                bow = True
            flags.append(bow)
            prev_text = text
        return flags
