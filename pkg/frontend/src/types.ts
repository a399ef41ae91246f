/** JSON payload shapes served by the tracing API. */

export type Relevance = "high" | "medium" | "low";

export interface SpanPayload {
  id: number;
  begin: number;
  end: number;
  text: string;
  char_begin: number;
  char_end: number;
  relevance: Relevance;
  unigram_logprob: number;
  occurrence_count: number;
}

export interface DocumentPayload {
  id: number;
  shard_id: number;
  doc_id: number;
  source: string;
  stage: string;
  snippet: string;
  snippet_token_range: [number, number];
  relevance: Relevance;
  bm25_raw: number;
  bm25_normalized: number;
  span_ids: number[];
}

export interface TraceStatsPayload {
  latency_ms?: number;
  probe_count: number;
  span_candidates: number;
  spans_kept: number;
}

export interface TracePayload {
  spans: SpanPayload[];
  documents: DocumentPayload[];
  adjacency: [number, number][];
  stats: TraceStatsPayload;
}

export interface DocumentViewPayload {
  shard_id: number;
  doc_id: number;
  source: string;
  stage: string;
  text: string;
  window_token_range: [number, number];
  total_doc_tokens: number;
}

export interface ApiErrorPayload {
  error: { code: string; message: string };
}

/** Shallow structural check; a mismatch means the server and client
 * disagree about the schema and the raw payload should be surfaced. */
export function isTracePayload(value: unknown): value is TracePayload {
  if (typeof value !== "object" || value === null) return false;
  const v = value as Record<string, unknown>;
  if (!Array.isArray(v.spans) || !Array.isArray(v.documents) || !Array.isArray(v.adjacency)) {
    return false;
  }
  const spanOk = v.spans.every(
    (s: unknown) =>
      typeof s === "object" &&
      s !== null &&
      ["id", "begin", "end", "char_begin", "char_end"].every(
        (k) => typeof (s as Record<string, unknown>)[k] === "number",
      ) &&
      typeof (s as Record<string, unknown>).text === "string" &&
      typeof (s as Record<string, unknown>).relevance === "string",
  );
  const docOk = v.documents.every(
    (d: unknown) =>
      typeof d === "object" &&
      d !== null &&
      typeof (d as Record<string, unknown>).id === "number" &&
      typeof (d as Record<string, unknown>).snippet === "string" &&
      Array.isArray((d as Record<string, unknown>).span_ids),
  );
  return spanOk && docOk;
}
