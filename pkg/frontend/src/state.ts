/** View state and its transitions.
 *
 * Selection is a pure view concern: transitions never touch the trace
 * payload, and at most one of span/document selection is set at a time.
 * Selecting the already-selected item toggles the selection off.
 */

import type { DocumentPayload, TracePayload } from "./types";

export const DOCS_PER_PAGE = 50;

export interface ViewState {
  trace: TracePayload | null;
  selectedSpanId: number | null;
  selectedDocId: number | null;
  page: number;
}

export function initialState(): ViewState {
  return { trace: null, selectedSpanId: null, selectedDocId: null, page: 0 };
}

/** Installing a new trace resets selection and paging: ids from the old
 * trace are stale by definition. */
export function setTrace(_state: ViewState, trace: TracePayload | null): ViewState {
  return { trace, selectedSpanId: null, selectedDocId: null, page: 0 };
}

export function selectSpan(state: ViewState, spanId: number): ViewState {
  if (!state.trace || !state.trace.spans.some((s) => s.id === spanId)) {
    return { ...state, selectedSpanId: null, selectedDocId: null };
  }
  if (state.selectedSpanId === spanId) {
    return clearSelection(state);
  }
  return { ...state, selectedSpanId: spanId, selectedDocId: null, page: 0 };
}

export function selectDocument(state: ViewState, docId: number): ViewState {
  if (!state.trace || !state.trace.documents.some((d) => d.id === docId)) {
    return { ...state, selectedSpanId: null, selectedDocId: null };
  }
  if (state.selectedDocId === docId) {
    return clearSelection(state);
  }
  return { ...state, selectedSpanId: null, selectedDocId: docId, page: 0 };
}

export function clearSelection(state: ViewState): ViewState {
  return { ...state, selectedSpanId: null, selectedDocId: null, page: 0 };
}

export function setPage(state: ViewState, page: number): ViewState {
  const pages = pageCount(state);
  const clamped = Math.max(0, Math.min(page, pages - 1));
  return { ...state, page: clamped };
}

/** All documents when nothing is selected; only documents enclosing the
 * selected span otherwise. Document selection does not filter the panel. */
export function visibleDocuments(state: ViewState): DocumentPayload[] {
  if (!state.trace) return [];
  const docs = state.trace.documents;
  if (state.selectedSpanId === null) return docs;
  return docs.filter((d) => d.span_ids.includes(state.selectedSpanId as number));
}

/** Span ids that should render as highlights: all spans by default, the
 * selected document's spans when a document is selected, only the span
 * itself when a span is selected. */
export function visibleSpanIds(state: ViewState): Set<number> {
  if (!state.trace) return new Set();
  if (state.selectedDocId !== null) {
    const doc = state.trace.documents.find((d) => d.id === state.selectedDocId);
    return new Set(doc ? doc.span_ids : []);
  }
  if (state.selectedSpanId !== null) {
    return new Set([state.selectedSpanId]);
  }
  return new Set(state.trace.spans.map((s) => s.id));
}

export function pageCount(state: ViewState): number {
  return Math.max(1, Math.ceil(visibleDocuments(state).length / DOCS_PER_PAGE));
}

export function pagedDocuments(state: ViewState): DocumentPayload[] {
  const docs = visibleDocuments(state);
  const start = state.page * DOCS_PER_PAGE;
  return docs.slice(start, start + DOCS_PER_PAGE);
}
