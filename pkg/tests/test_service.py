import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient

from tracescope.index_builder import shard_dirs
from tracescope.service import ServiceConfig, create_app

from conftest import FIXTURE_TEXTS, build_text_index, build_token_index

ADMIN = {"X-Admin-Token": "sesame"}


@pytest.fixture()
def client(tmp_path):
    root = build_text_index(tmp_path, FIXTURE_TEXTS)
    config = ServiceConfig(index_root=root, admin_token="sesame")
    with TestClient(create_app(config)) as c:
        yield c


def assert_error_envelope(response, status):
    assert response.status_code == status
    body = response.json()
    assert set(body) == {"error"}
    assert set(body["error"]) == {"code", "message"}


# -- /api/v1/trace -------------------------------------------------------------

def test_trace_endpoint_happy_path(client):
    r = client.post("/api/v1/trace", json={
        "prompt": "tell me about seattle",
        "response": "The space needle was built for the 1962 World Fair.",
    })
    assert r.status_code == 200
    body = r.json()
    assert body["spans"], "expected at least one span"
    assert set(body["spans"][0]) >= {"id", "begin", "end", "text", "relevance",
                                     "unigram_logprob", "occurrence_count"}
    assert set(body["documents"][0]) >= {"id", "shard_id", "doc_id", "source", "stage",
                                         "snippet", "relevance", "bm25_raw",
                                         "bm25_normalized", "span_ids"}
    assert set(body["stats"]) == {"latency_ms", "probe_count", "span_candidates", "spans_kept"}


def test_trace_missing_response_400(client):
    assert_error_envelope(client.post("/api/v1/trace", json={"prompt": "x"}), 400)
    assert_error_envelope(client.post("/api/v1/trace", json={"response": ""}), 400)


def test_trace_bad_option_400(client):
    r = client.post("/api/v1/trace", json={"response": "x", "options": {"max_docs_per_span": 0}})
    assert_error_envelope(r, 400)
    r = client.post("/api/v1/trace", json={"response": "x", "options": {"bogus": 1}})
    assert_error_envelope(r, 400)


def test_trace_non_json_body_400(client):
    r = client.post("/api/v1/trace", content=b"not json",
                    headers={"Content-Type": "application/json"})
    assert_error_envelope(r, 400)


def test_trace_oversize_413(tmp_path):
    root = build_text_index(tmp_path, FIXTURE_TEXTS)
    config = ServiceConfig(index_root=root, body_limit_bytes=1024 * 1024)
    with TestClient(create_app(config)) as c:
        big = "x" * (1024 * 1024 + 10)
        r = c.post("/api/v1/trace", json={"response": big})
        assert_error_envelope(r, 413)


def test_trace_deterministic_with_seed(client):
    body = {"prompt": "p", "response": "The space needle was built for the 1962 World Fair.",
            "options": {"seed": 7}}
    results = [client.post("/api/v1/trace", json=body).json() for _ in range(3)]
    for r in results:
        r["stats"].pop("latency_ms")
    assert results[0] == results[1] == results[2]


def test_trace_concurrent_identical(client):
    body = {"prompt": "p", "response": "The space needle was built for the 1962 World Fair.",
            "options": {"seed": 3}}
    def call(_):
        r = client.post("/api/v1/trace", json=body)
        payload = r.json()
        payload["stats"].pop("latency_ms")
        return json.dumps(payload, sort_keys=True)
    with ThreadPoolExecutor(max_workers=8) as pool:
        outputs = list(pool.map(call, range(8)))
    assert len(set(outputs)) == 1


def test_trace_before_load_503(tmp_path):
    root = build_text_index(tmp_path, FIXTURE_TEXTS)
    app = create_app(ServiceConfig(index_root=root))
    # no lifespan: the index is never loaded
    client = TestClient(app)
    assert_error_envelope(client.post("/api/v1/trace", json={"response": "x"}), 503)


# -- /api/v1/docs ---------------------------------------------------------------

def test_docs_window_exactly_500(tmp_path):
    doc = np.full(2000, 5, dtype=np.int64)
    root = build_token_index(tmp_path, [doc], vocab_size=16)
    with TestClient(create_app(ServiceConfig(index_root=root))) as c:
        r = c.get("/api/v1/docs/0/0", params={"center": 1000, "window": 500})
        assert r.status_code == 200
        body = r.json()
        lo, hi = body["window_token_range"]
        assert hi - lo == 500
        assert body["total_doc_tokens"] == 2000
        assert lo <= 1000 < hi


def test_docs_short_doc_whole(client):
    r = client.get("/api/v1/docs/0/0", params={"window": 500})
    assert r.status_code == 200
    body = r.json()
    lo, hi = body["window_token_range"]
    assert lo == 0 and hi == body["total_doc_tokens"]
    assert body["source"] == "src-0"
    assert body["stage"] == "pretraining"


def test_docs_unknown_404(client):
    assert_error_envelope(client.get("/api/v1/docs/0/999"), 404)
    assert_error_envelope(client.get("/api/v1/docs/7/0"), 404)


def test_docs_bad_center_window_400(client):
    assert_error_envelope(client.get("/api/v1/docs/0/0", params={"window": 0}), 400)
    assert_error_envelope(client.get("/api/v1/docs/0/0", params={"center": 10_000}), 400)


def test_docs_taken_down_404(client):
    r = client.post("/api/v1/takedown", headers=ADMIN,
                    json={"documents": [{"shard_id": 0, "doc_id": 0}]})
    assert r.status_code == 200
    assert_error_envelope(client.get("/api/v1/docs/0/0"), 404)


# -- /api/v1/takedown -------------------------------------------------------------

def test_takedown_requires_token(client):
    r = client.post("/api/v1/takedown", json={"documents": [{"shard_id": 0, "doc_id": 0}]})
    assert_error_envelope(r, 401)
    r = client.post("/api/v1/takedown", headers={"X-Admin-Token": "wrong"},
                    json={"documents": [{"shard_id": 0, "doc_id": 0}]})
    assert_error_envelope(r, 401)


def test_takedown_counts_and_idempotence(client):
    body = {"documents": [{"shard_id": 0, "doc_id": 1}]}
    first = client.post("/api/v1/takedown", headers=ADMIN, json=body)
    assert first.status_code == 200
    assert first.json() == {"applied": 1, "already_present": 0, "unknown": 0}
    again = client.post("/api/v1/takedown", headers=ADMIN, json=body)
    assert again.json() == {"applied": 0, "already_present": 1, "unknown": 0}


def test_takedown_excludes_from_subsequent_trace(client):
    response_text = "I'm going on an adventure, said the hobbit"
    before = client.post("/api/v1/trace", json={"response": response_text}).json()
    assert any(d["source"] == "src-1" for d in before["documents"])
    doc = next(d for d in before["documents"] if d["source"] == "src-1")
    r = client.post("/api/v1/takedown", headers=ADMIN, json={
        "documents": [{"shard_id": doc["shard_id"], "doc_id": doc["doc_id"]}]})
    assert r.status_code == 200
    after = client.post("/api/v1/trace", json={"response": response_text}).json()
    assert all(d["source"] != "src-1" for d in after["documents"])


def test_takedown_all_unknown_422(client):
    r = client.post("/api/v1/takedown", headers=ADMIN,
                    json={"documents": [{"shard_id": 9, "doc_id": 9}]})
    assert_error_envelope(r, 422)


def test_takedown_mixed_applies_known(client):
    r = client.post("/api/v1/takedown", headers=ADMIN, json={"documents": [
        {"shard_id": 0, "doc_id": 2}, {"shard_id": 9, "doc_id": 9}]})
    assert r.status_code == 200
    assert r.json() == {"applied": 1, "already_present": 0, "unknown": 1}


# -- /healthz ----------------------------------------------------------------------

def test_healthz_ok(client):
    r = client.get("/healthz")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok"
    assert body["shards_loaded"] == 1
    assert body["num_tokens"] > 0


def test_healthz_before_load_503(tmp_path):
    root = build_text_index(tmp_path, FIXTURE_TEXTS)
    app = create_app(ServiceConfig(index_root=root))
    assert_error_envelope(TestClient(app).get("/healthz"), 503)


def test_healthz_corrupt_shard_names_it(tmp_path):
    root = build_text_index(tmp_path, FIXTURE_TEXTS)
    shard = shard_dirs(root)[0]
    sa = (shard / "sa.bin").read_bytes()
    (shard / "sa.bin").write_bytes(sa[:-8])  # truncate one entry
    with TestClient(create_app(ServiceConfig(index_root=root))) as c:
        r = c.get("/healthz")
        assert_error_envelope(r, 503)
        assert "shard_00000" in r.json()["error"]["message"]
        assert_error_envelope(c.post("/api/v1/trace", json={"response": "x"}), 503)


def test_service_config_bounds(tmp_path):
    with pytest.raises(ValueError):
        ServiceConfig(index_root=tmp_path, body_limit_bytes=1000)
    with pytest.raises(ValueError):
        ServiceConfig(index_root=tmp_path, timeout_seconds=0)


def test_trace_timeout_504(tmp_path):
    root = build_text_index(tmp_path, FIXTURE_TEXTS)
    config = ServiceConfig(index_root=root, timeout_seconds=0.05)
    with TestClient(create_app(config)) as c:
        tracer = c.app.state.tracer
        original = tracer.trace

        def slow_trace(*args, **kwargs):
            import time
            time.sleep(0.3)
            return original(*args, **kwargs)

        tracer.trace = slow_trace
        r = c.post("/api/v1/trace", json={"response": "anything"})
        assert_error_envelope(r, 504)
