import { describe, expect, it, vi } from "vitest";

import { ApiError, SchemaError, TraceApi } from "../src/api";
import { fixtureTrace } from "./fixtures";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("TraceApi.trace", () => {
  it("posts prompt/response and returns the payload", async () => {
    const fetchFn = vi.fn(async () => jsonResponse(fixtureTrace()));
    const api = new TraceApi("", fetchFn as unknown as typeof fetch);
    const payload = await api.trace("a prompt", "a response", 7);
    expect(payload.spans).toHaveLength(3);
    const [url, init] = fetchFn.mock.calls[0] as unknown as [string, RequestInit];
    expect(url).toBe("/api/v1/trace");
    expect(JSON.parse(init.body as string)).toEqual({
      prompt: "a prompt",
      response: "a response",
      options: { seed: 7 },
    });
  });

  it("surfaces the server's error envelope", async () => {
    const fetchFn = vi.fn(async () =>
      jsonResponse({ error: { code: "bad_request", message: "field 'response' must be a non-empty string" } }, 400),
    );
    const api = new TraceApi("", fetchFn as unknown as typeof fetch);
    const err = await api.trace("", "x").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(400);
    expect(err.message).toContain("non-empty");
    expect(err.retryable).toBe(false);
  });

  it("marks 503 as retryable", async () => {
    const fetchFn = vi.fn(async () =>
      jsonResponse({ error: { code: "index_unavailable", message: "index not loaded yet" } }, 503),
    );
    const api = new TraceApi("", fetchFn as unknown as typeof fetch);
    const err = await api.trace("", "x").catch((e) => e);
    expect(err.retryable).toBe(true);
  });

  it("rejects payloads that do not match the schema", async () => {
    const fetchFn = vi.fn(async () => jsonResponse({ spans: "not a list" }));
    const api = new TraceApi("", fetchFn as unknown as typeof fetch);
    const err = await api.trace("", "x").catch((e) => e);
    expect(err).toBeInstanceOf(SchemaError);
    expect(err.raw).toEqual({ spans: "not a list" });
  });

  it("passes the abort signal through to fetch", async () => {
    const fetchFn = vi.fn(async (_url: string, init?: RequestInit) => {
      expect(init?.signal).toBeInstanceOf(AbortSignal);
      return jsonResponse(fixtureTrace());
    });
    const api = new TraceApi("", fetchFn as unknown as typeof fetch);
    const controller = new AbortController();
    await api.trace("", "x", undefined, controller.signal);
    expect(fetchFn).toHaveBeenCalled();
  });
});

describe("TraceApi.viewDocument", () => {
  it("requests a 500-token window around the given center", async () => {
    const fetchFn = vi.fn(async () =>
      jsonResponse({
        shard_id: 0,
        doc_id: 1,
        source: "",
        stage: "pretraining",
        text: "t",
        window_token_range: [0, 500],
        total_doc_tokens: 900,
      }),
    );
    const api = new TraceApi("", fetchFn as unknown as typeof fetch);
    const view = await api.viewDocument(0, 1, 250);
    expect(view.window_token_range[1] - view.window_token_range[0]).toBe(500);
    const [url] = fetchFn.mock.calls[0] as unknown as [string];
    expect(url).toBe("/api/v1/docs/0/1?window=500&center=250");
  });

  it("raises ApiError with status 404 for missing documents", async () => {
    const fetchFn = vi.fn(async () =>
      jsonResponse({ error: { code: "not_found", message: "unknown document" } }, 404),
    );
    const api = new TraceApi("", fetchFn as unknown as typeof fetch);
    const err = await api.viewDocument(0, 99).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(404);
  });
});
