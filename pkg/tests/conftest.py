import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from tracescope.index_builder import BuildConfig, DocumentRecord, ingest, ingest_pretokenized
from tracescope.search_engine import SearchEngine
from tracescope.tokenization import TokenClassTable, Tokenizer

# Synthetic vocabulary for token-level tests: id 0 is a period, id 1 a
# newline (both delimiters), every other id a space-prefixed word (so it
# carries the begin-of-word flag). Decoding then re-encoding a random ID
# sequence reproduces it exactly, which end-to-end tests rely on.
DELIM_PERIOD = 0
DELIM_NEWLINE = 1


def synthetic_tokenizer(vocab_size: int) -> Tokenizer:
    table = TokenClassTable()
    table.add(".")
    table.add("\n")
    for k in range(2, vocab_size):
        table.add(f" w{k}")
    return Tokenizer(table, kind="default", mutable=False)


def random_token_docs(rng: np.random.Generator, vocab_size: int, num_docs: int,
                      min_len: int = 20, max_len: int = 400) -> list[np.ndarray]:
    docs = []
    for _ in range(num_docs):
        n = int(rng.integers(min_len, max_len + 1))
        docs.append(rng.integers(0, vocab_size, size=n).astype(np.int64))
    return docs


def plant_response(rng: np.random.Generator, docs: list[np.ndarray], vocab_size: int,
                   length: int, num_plants: int = 4) -> np.ndarray:
    """A response of random tokens with verbatim substrings copied from docs."""
    response = rng.integers(0, vocab_size, size=length).astype(np.int64)
    for _ in range(num_plants):
        doc = docs[int(rng.integers(0, len(docs)))]
        if doc.size < 3 or length < 3:
            continue
        span_len = int(rng.integers(3, min(doc.size, max(length // 3, 4), length) + 1))
        src = int(rng.integers(0, doc.size - span_len + 1))
        dst = int(rng.integers(0, length - span_len + 1))
        response[dst:dst + span_len] = doc[src:src + span_len]
    return response


def build_token_index(tmp_path: Path, docs: list[np.ndarray], vocab_size: int,
                      shard_cap: int = 10_000_000, name: str = "index") -> Path:
    root = tmp_path / name
    tokenizer = synthetic_tokenizer(vocab_size)
    ingest_pretokenized([(d, f"doc-{i}", "pretraining") for i, d in enumerate(docs)],
                        tokenizer, BuildConfig(out_dir=root, shard_cap=shard_cap))
    return root


def build_text_index(tmp_path: Path, texts: list[str], shard_cap: int = 10_000_000,
                     name: str = "text-index", stages: list[str] | None = None) -> Path:
    root = tmp_path / name
    records = []
    for i, text in enumerate(texts):
        stage = stages[i] if stages else "pretraining"
        records.append(DocumentRecord(text=text, source=f"src-{i}", stage=stage))
    ingest(records, BuildConfig(out_dir=root, shard_cap=shard_cap))
    return root


FIXTURE_TEXTS = [
    "The space needle was built for the 1962 World Fair. It is 605 feet tall.",
    "I'm going on an adventure, said the hobbit as he ran down the hill.\nThe morning was bright.",
    "Paris is the capital of France. The Eiffel tower stands in Paris near the Seine.",
    "To compute the binomial coefficient choose 4 from 10 gives 210 exactly.",
    "The quick brown fox jumps over the lazy dog. The dog did not mind at all.",
]


@pytest.fixture()
def fixture_index(tmp_path) -> Path:
    return build_text_index(tmp_path, FIXTURE_TEXTS)


@pytest.fixture()
def fixture_engine(fixture_index):
    engine = SearchEngine(fixture_index)
    yield engine
    engine.close()
