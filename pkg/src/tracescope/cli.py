"""Operator command line: build, trace, serve, takedown, stats, validate.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import json
import statistics
import sys
from pathlib import Path

import click

from .index_builder import (
    BuildConfig,
    BuildError,
    DocumentRecord,
    ShardLoadError,
    ingest,
    shard_dirs,
    validate_shard,
)
from .pipeline import TraceConfig, Tracer
from .search_engine import QueryError, SearchEngine, UnknownDocumentError
from .tokenization import Tokenizer, TokenizerError

RELEVANCE_MARKERS = {"high": "***", "medium": "**", "low": "*"}


class RuntimeCliError(click.ClickException):
    exit_code = 2


@click.group()
def cli():
    """Trace language-model responses back to an indexed training corpus."""


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path(path_type=Path),
              help="JSONL corpus: one {text, source?, stage?} object per line.")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--shard-cap", default=10_000_000, show_default=True,
              help="Maximum tokens per shard (including document separators).")
@click.option("--tokenizer", "tokenizer_spec", default="default", show_default=True,
              help="'default' or a path to a tokenizer sidecar JSON.")
def build(input_path: Path, out_dir: Path, shard_cap: int, tokenizer_spec: str):
    """Tokenize a JSONL corpus and write index shards."""
    if not input_path.exists():
        raise RuntimeCliError(f"input file not found: {input_path}")
    if tokenizer_spec == "default":
        tokenizer = Tokenizer(mutable=True)
    else:
        try:
            tokenizer = Tokenizer.load_sidecar(tokenizer_spec)
        except (OSError, TokenizerError, json.JSONDecodeError) as e:
            raise RuntimeCliError(f"cannot load tokenizer sidecar: {e}")

    documents = []
    with open(input_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                documents.append(DocumentRecord(
                    text=obj["text"],
                    source=obj.get("source", ""),
                    stage=obj.get("stage", "pretraining"),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, BuildError) as e:
                raise RuntimeCliError(f"bad document at line {lineno}: {e}")
    try:
        shards = ingest(documents, BuildConfig(out_dir=out_dir, shard_cap=shard_cap,
                                               tokenizer=tokenizer))
    except (BuildError, TokenizerError) as e:
        raise RuntimeCliError(str(e))
    docs = sum(s.num_docs for s in shards)
    tokens = sum(s.num_tokens for s in shards)
    suffix = "shard" if len(shards) == 1 else "shards"
    click.echo(f"{docs} docs, {tokens} tokens, {len(shards)} {suffix}")


@cli.command()
@click.option("--index", "index_root", required=True, type=click.Path(path_type=Path))
@click.option("--prompt-file", type=click.Path(path_type=Path))
@click.option("--response-file", required=True, type=click.Path(path_type=Path))
@click.option("--seed", default=0, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["json", "pretty"]), default="pretty",
              show_default=True)
def trace(index_root: Path, prompt_file: Path | None, response_file: Path, seed: int, fmt: str):
    """Trace one response against an index and print spans and documents."""
    prompt = ""
    if prompt_file is not None:
        if not prompt_file.exists():
            raise RuntimeCliError(f"prompt file not found: {prompt_file}")
        prompt = prompt_file.read_text(encoding="utf-8")
    if not response_file.exists():
        raise RuntimeCliError(f"response file not found: {response_file}")
    response = response_file.read_text(encoding="utf-8")
    if not response:
        raise click.UsageError("response file is empty")

    engine = _open_engine(index_root)
    tracer = Tracer(engine, TraceConfig(rng_seed=seed))
    try:
        result = tracer.trace(prompt, response)
    finally:
        tracer.close()
        engine.close()

    if fmt == "json":
        # byte-stable given a fixed seed and index: latency excluded
        payload = result.to_payload(include_latency=False)
        click.echo(json.dumps(payload, sort_keys=True, ensure_ascii=False,
                              separators=(",", ":")))
        return
    payload = result.to_payload(include_latency=True)
    click.echo(f"spans: {len(payload['spans'])}  documents: {len(payload['documents'])}  "
               f"latency: {payload['stats']['latency_ms']:.1f} ms")
    for span in payload["spans"]:
        marker = RELEVANCE_MARKERS[span["relevance"]]
        click.echo(f"  {marker} [{span['begin']},{span['end']}) x{span['occurrence_count']} "
                   f"{span['text']!r}")
    for doc in payload["documents"][:10]:
        marker = RELEVANCE_MARKERS[doc["relevance"]]
        source = doc["source"] or f"{doc['shard_id']}:{doc['doc_id']}"
        click.echo(f"  {marker} doc {source} ({doc['stage']}) bm25={doc['bm25_raw']:.3f} "
                   f"norm={doc['bm25_normalized']:.3f}")


@cli.command()
@click.option("--index", "index_root", required=True, type=click.Path(path_type=Path))
@click.option("--listen", default="127.0.0.1:8080", show_default=True)
@click.option("--parallelism", default=1, show_default=True)
def serve(index_root: Path, listen: str, parallelism: int):
    """Serve the tracing API over HTTP."""
    import uvicorn

    from .service import ServiceConfig, create_app

    try:
        host, _, port = listen.rpartition(":")
        config = ServiceConfig(index_root=index_root, listen=listen, parallelism=parallelism,
                               admin_token=_admin_token_from_env())
        app = create_app(config)
    except ValueError as e:
        raise RuntimeCliError(str(e))
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))


def _admin_token_from_env() -> str | None:
    import os

    from .service import ENV_ADMIN_TOKEN
    return os.environ.get(ENV_ADMIN_TOKEN)


@cli.command()
@click.option("--index", "index_root", required=True, type=click.Path(path_type=Path))
@click.option("--doc", "docs", multiple=True, required=True,
              help="Document to take down, as shard:doc (repeatable).")
def takedown(index_root: Path, docs: tuple[str, ...]):
    """Exclude documents from all future query results."""
    pairs = []
    for spec in docs:
        try:
            shard_id, doc_id = spec.split(":", 1)
            pairs.append((int(shard_id), int(doc_id)))
        except ValueError:
            raise click.UsageError(f"--doc must look like shard:doc, got {spec!r}")
    engine = _open_engine(index_root)
    try:
        ack = engine.take_down(pairs)
    except UnknownDocumentError as e:
        raise RuntimeCliError(f"unknown documents: {e.unknown} "
                              f"(applied {e.ack.applied}, already present {e.ack.already_present})")
    finally:
        engine.close()
    click.echo(f"applied {ack.applied}, already present {ack.already_present}")


@cli.command()
@click.option("--index", "index_root", type=click.Path(path_type=Path))
@click.option("--traces", "traces_dir", type=click.Path(path_type=Path),
              help="Directory of saved trace JSON files to summarize.")
def stats(index_root: Path | None, traces_dir: Path | None):
    """Summarize an index and/or saved traces.

    Reports span-length mean/median/histogram and relevance-bucket
    fractions for the supplied traces. Numbers depend entirely on the
    corpus and traces at hand; published statistics from other corpora
    are not reproducible from this command.
    """
    if index_root is None and traces_dir is None:
        raise click.UsageError("provide --index and/or --traces")
    if index_root is not None:
        engine = _open_engine(index_root)
        try:
            click.echo(f"index: {len(engine.shards)} shards, "
                       f"{sum(s.num_docs for s in engine.shards)} docs, "
                       f"{engine.num_tokens} tokens, vocab {engine.tokenizer.vocab_size}")
        finally:
            engine.close()
    if traces_dir is None:
        return
    lengths: list[int] = []
    span_levels: dict[str, int] = {"high": 0, "medium": 0, "low": 0}
    doc_levels: dict[str, int] = {"high": 0, "medium": 0, "low": 0}
    files = sorted(Path(traces_dir).glob("*.json"))
    for path in files:
        payload = json.loads(path.read_text(encoding="utf-8"))
        for span in payload.get("spans", []):
            lengths.append(span["end"] - span["begin"])
            span_levels[span["relevance"]] += 1
        for doc in payload.get("documents", []):
            doc_levels[doc["relevance"]] += 1
    click.echo(f"traces: {len(files)}")
    click.echo(f"spans: {len(lengths)}")
    if lengths:
        click.echo(f"span length mean {statistics.mean(lengths):.1f} "
                   f"median {int(statistics.median(lengths))}")
        histogram: dict[int, int] = {}
        for n in lengths:
            histogram[n] = histogram.get(n, 0) + 1
        for n in sorted(histogram):
            click.echo(f"  len {n}: {histogram[n]}")
        total_spans = len(lengths)
        fractions = " ".join(f"{k} {100 * v / total_spans:.1f}%" for k, v in span_levels.items())
        click.echo(f"span relevance: {fractions}")
    total_docs = sum(doc_levels.values())
    if total_docs:
        fractions = " ".join(f"{k} {100 * v / total_docs:.1f}%" for k, v in doc_levels.items())
        click.echo(f"document relevance: {fractions}")


@cli.command()
@click.option("--index", "index_root", required=True, type=click.Path(path_type=Path))
def validate(index_root: Path):
    """Check every shard invariant and report pass/fail per check."""
    paths = shard_dirs(index_root)
    if not paths:
        raise RuntimeCliError(f"no shards found under {index_root}")
    failed = []
    for shard_path in paths:
        try:
            report = validate_shard(shard_path)
        except ShardLoadError as e:
            raise RuntimeCliError(str(e))
        for check in report.checks:
            status = "ok" if check.passed else "FAIL"
            click.echo(f"{shard_path.name} {check.name}: {status}"
                       + (f" ({check.detail})" if not check.passed and check.detail else ""))
        failed.extend(f"{shard_path.name}:{c.name}" for c in report.failures())
    if failed:
        raise RuntimeCliError("validation failed: " + ", ".join(failed))
    click.echo("all checks passed")


def _open_engine(index_root: Path) -> SearchEngine:
    try:
        return SearchEngine(index_root)
    except (ShardLoadError, QueryError, OSError) as e:
        raise RuntimeCliError(f"cannot open index at {index_root}: {e}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.UsageError as e:
        e.show(file=sys.stderr)
        return 1
    except click.ClickException as e:
        e.show(file=sys.stderr)
        return e.exit_code if e.exit_code != 1 else 2
    except (BuildError, ShardLoadError, QueryError, TokenizerError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
