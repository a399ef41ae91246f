import type { DocumentPayload, SpanPayload, TracePayload } from "../src/types";

export function makeSpan(partial: Partial<SpanPayload> & { id: number }): SpanPayload {
  return {
    begin: 0,
    end: 2,
    text: "span text",
    char_begin: 0,
    char_end: 9,
    relevance: "low",
    unigram_logprob: -5.0,
    occurrence_count: 1,
    ...partial,
  };
}

export function makeDoc(partial: Partial<DocumentPayload> & { id: number }): DocumentPayload {
  return {
    shard_id: 0,
    doc_id: partial.id,
    source: `src-${partial.id}`,
    stage: "pretraining",
    snippet: "a snippet",
    snippet_token_range: [0, 10],
    relevance: "low",
    bm25_raw: 1.0,
    bm25_normalized: 0.1,
    span_ids: [],
    ...partial,
  };
}

/** Response "alpha beta gamma delta epsilon" with three spans and five
 * documents; span 0 is enclosed by docs 0 and 1, span 1 by docs 2-4,
 * span 2 by doc 0 only. */
export const RESPONSE_TEXT = "alpha beta gamma delta epsilon";

export function fixtureTrace(): TracePayload {
  const spans = [
    makeSpan({ id: 0, begin: 0, end: 1, char_begin: 0, char_end: 5, text: "alpha", relevance: "high" }),
    makeSpan({ id: 1, begin: 1, end: 3, char_begin: 5, char_end: 16, text: " beta gamma", relevance: "medium" }),
    makeSpan({ id: 2, begin: 4, end: 5, char_begin: 22, char_end: 30, text: " epsilon", relevance: "low" }),
  ];
  const documents = [
    makeDoc({ id: 0, span_ids: [0, 2], relevance: "high", bm25_normalized: 0.9 }),
    makeDoc({ id: 1, span_ids: [0], relevance: "medium", bm25_normalized: 0.6 }),
    makeDoc({ id: 2, span_ids: [1], relevance: "low" }),
    makeDoc({ id: 3, span_ids: [1], relevance: "low" }),
    makeDoc({ id: 4, span_ids: [1], relevance: "medium", bm25_normalized: 0.55 }),
  ];
  const adjacency: [number, number][] = [];
  for (const doc of documents) {
    for (const spanId of doc.span_ids) {
      adjacency.push([spanId, doc.id]);
    }
  }
  return { spans, documents, adjacency, stats: { probe_count: 10, span_candidates: 4, spans_kept: 3 } };
}
