import { describe, expect, it } from "vitest";

import {
  DOCS_PER_PAGE,
  clearSelection,
  initialState,
  pageCount,
  pagedDocuments,
  selectDocument,
  selectSpan,
  setPage,
  setTrace,
  visibleDocuments,
  visibleSpanIds,
} from "../src/state";
import { fixtureTrace, makeDoc, makeSpan } from "./fixtures";

function loaded() {
  return setTrace(initialState(), fixtureTrace());
}

describe("selection filtering", () => {
  it("shows everything when nothing is selected", () => {
    const state = loaded();
    expect(visibleDocuments(state).map((d) => d.id)).toEqual([0, 1, 2, 3, 4]);
    expect(visibleSpanIds(state)).toEqual(new Set([0, 1, 2]));
  });

  it("span selection filters the panel to exactly the adjacency set", () => {
    const state = selectSpan(loaded(), 0);
    expect(visibleDocuments(state).map((d) => d.id)).toEqual([0, 1]);
    const other = selectSpan(loaded(), 1);
    expect(visibleDocuments(other).map((d) => d.id)).toEqual([2, 3, 4]);
  });

  it("document selection narrows highlights to exactly its spans", () => {
    const state = selectDocument(loaded(), 0);
    expect(visibleSpanIds(state)).toEqual(new Set([0, 2]));
    const single = selectDocument(loaded(), 2);
    expect(visibleSpanIds(single)).toEqual(new Set([1]));
  });

  it("at most one selection axis is ever set", () => {
    let state = selectSpan(loaded(), 0);
    expect(state.selectedSpanId).toBe(0);
    expect(state.selectedDocId).toBeNull();
    state = selectDocument(state, 3);
    expect(state.selectedSpanId).toBeNull();
    expect(state.selectedDocId).toBe(3);
  });
});

describe("toggle and clear semantics", () => {
  it("selecting the selected span again clears the selection", () => {
    const once = selectSpan(loaded(), 1);
    const twice = selectSpan(once, 1);
    expect(twice.selectedSpanId).toBeNull();
    expect(visibleDocuments(twice).map((d) => d.id)).toEqual([0, 1, 2, 3, 4]);
    expect(visibleSpanIds(twice)).toEqual(new Set([0, 1, 2]));
  });

  it("selecting the selected document again clears the selection", () => {
    const once = selectDocument(loaded(), 4);
    const twice = selectDocument(once, 4);
    expect(twice.selectedDocId).toBeNull();
    expect(visibleSpanIds(twice)).toEqual(new Set([0, 1, 2]));
  });

  it("clearSelection restores the full view", () => {
    const state = clearSelection(selectSpan(loaded(), 2));
    expect(state.selectedSpanId).toBeNull();
    expect(state.selectedDocId).toBeNull();
    expect(visibleDocuments(state)).toHaveLength(5);
  });
});

describe("stale ids and trace replacement", () => {
  it("installing a new trace resets the selection", () => {
    const state = selectSpan(loaded(), 0);
    const swapped = setTrace(state, fixtureTrace());
    expect(swapped.selectedSpanId).toBeNull();
    expect(swapped.page).toBe(0);
  });

  it("selecting an id that is not in the trace resets selection", () => {
    const state = selectSpan(loaded(), 99);
    expect(state.selectedSpanId).toBeNull();
    const docState = selectDocument(loaded(), 99);
    expect(docState.selectedDocId).toBeNull();
  });

  it("transitions never mutate the trace payload", () => {
    const state = loaded();
    const snapshot = JSON.stringify(state.trace);
    selectSpan(state, 0);
    selectDocument(state, 1);
    clearSelection(state);
    setPage(state, 1);
    expect(JSON.stringify(state.trace)).toBe(snapshot);
  });
});

describe("pagination", () => {
  function bigTrace() {
    const spans = [makeSpan({ id: 0 })];
    const documents = Array.from({ length: 120 }, (_, i) => makeDoc({ id: i, span_ids: [0] }));
    return setTrace(initialState(), {
      spans,
      documents,
      adjacency: documents.map((d) => [0, d.id] as [number, number]),
      stats: { probe_count: 0, span_candidates: 1, spans_kept: 1 },
    });
  }

  it("pages documents 50 per page", () => {
    const state = bigTrace();
    expect(pageCount(state)).toBe(3);
    expect(pagedDocuments(state)).toHaveLength(DOCS_PER_PAGE);
    const last = setPage(state, 2);
    expect(pagedDocuments(last)).toHaveLength(20);
  });

  it("clamps page to the valid range", () => {
    const state = bigTrace();
    expect(setPage(state, -3).page).toBe(0);
    expect(setPage(state, 99).page).toBe(2);
  });
});
