/** DOM rendering: highlighted response, document panel, extended view.
 *
 * Highlights are anchored with the character offsets precomputed by the
 * service (char_begin/char_end), so the browser never re-tokenizes.
 * Relevance maps to one hue at three saturation steps via CSS classes
 * relevance-high / relevance-medium / relevance-low.
 */

import type { DocumentPayload, DocumentViewPayload, SpanPayload, TracePayload } from "./types";
import { pageCount, pagedDocuments, visibleSpanIds, type ViewState } from "./state";

export interface Handlers {
  onSelectSpan(spanId: number): void;
  onSelectDocument(docId: number): void;
  onClearSelection(): void;
  onViewDocument(doc: DocumentPayload): void;
  onPage(page: number): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderResponse(
  container: HTMLElement,
  responseText: string,
  state: ViewState,
  handlers: Handlers,
): void {
  container.textContent = "";
  const trace = state.trace;
  if (!trace) return;
  const visible = visibleSpanIds(state);
  const spans = [...trace.spans].sort((a, b) => a.char_begin - b.char_begin);
  let cursor = 0;
  for (const span of spans) {
    if (span.char_begin > cursor) {
      container.appendChild(document.createTextNode(responseText.slice(cursor, span.char_begin)));
    }
    const text = responseText.slice(span.char_begin, span.char_end);
    if (!visible.has(span.id)) {
      container.appendChild(document.createTextNode(text));
    } else {
      const mark = el("mark", `span-highlight relevance-${span.relevance}`, text);
      mark.dataset.spanId = String(span.id);
      if (state.selectedSpanId === span.id) {
        mark.classList.add("selected");
      }
      mark.title = `${span.occurrence_count} occurrence(s), log p = ${span.unigram_logprob.toFixed(2)}`;
      mark.addEventListener("click", () => handlers.onSelectSpan(span.id));
      container.appendChild(mark);
    }
    cursor = Math.max(cursor, span.char_end);
  }
  if (cursor < responseText.length) {
    container.appendChild(document.createTextNode(responseText.slice(cursor)));
  }
}

function renderDocumentCard(doc: DocumentPayload, state: ViewState, handlers: Handlers): HTMLElement {
  const card = el("article", `doc-card relevance-border-${doc.relevance}`);
  card.dataset.docId = String(doc.id);
  if (state.selectedDocId === doc.id) {
    card.classList.add("selected");
  }
  card.appendChild(el("div", `relevance-sidebar relevance-${doc.relevance}`));
  const body = el("div", "doc-body");
  const head = el("header", "doc-head");
  head.appendChild(el("span", "doc-source", doc.source || `${doc.shard_id}:${doc.doc_id}`));
  head.appendChild(el("span", `stage-badge stage-${doc.stage}`, doc.stage));
  head.appendChild(el("span", "doc-score", `bm25 ${doc.bm25_normalized.toFixed(2)}`));
  body.appendChild(head);
  body.appendChild(el("p", "doc-snippet", doc.snippet));
  const actions = el("div", "doc-actions");
  const locate = el("button", "locate-spans", state.selectedDocId === doc.id ? "Clear Selection" : "Locate Spans");
  locate.addEventListener("click", () => handlers.onSelectDocument(doc.id));
  const view = el("button", "view-document", "View Document");
  view.addEventListener("click", () => handlers.onViewDocument(doc));
  actions.appendChild(locate);
  actions.appendChild(view);
  body.appendChild(actions);
  card.appendChild(body);
  return card;
}

export function renderDocumentPanel(container: HTMLElement, state: ViewState, handlers: Handlers): void {
  container.textContent = "";
  if (!state.trace) return;
  const docs = pagedDocuments(state);
  if (state.trace.documents.length === 0) {
    container.appendChild(el("p", "empty-state", "no matches found"));
    return;
  }
  for (const doc of docs) {
    container.appendChild(renderDocumentCard(doc, state, handlers));
  }
  const pages = pageCount(state);
  if (pages > 1) {
    const pager = el("nav", "pager");
    const prev = el("button", "pager-prev", "previous");
    prev.disabled = state.page === 0;
    prev.addEventListener("click", () => handlers.onPage(state.page - 1));
    const next = el("button", "pager-next", "next");
    next.disabled = state.page >= pages - 1;
    next.addEventListener("click", () => handlers.onPage(state.page + 1));
    pager.appendChild(prev);
    pager.appendChild(el("span", "pager-label", `page ${state.page + 1} / ${pages}`));
    pager.appendChild(next);
    container.appendChild(pager);
  }
}

export function renderSelectionBar(container: HTMLElement, state: ViewState, handlers: Handlers): void {
  container.textContent = "";
  if (state.selectedSpanId === null && state.selectedDocId === null) return;
  const label =
    state.selectedSpanId !== null
      ? `filtering by span #${state.selectedSpanId}`
      : `showing spans of document #${state.selectedDocId}`;
  container.appendChild(el("span", "selection-label", label));
  const clear = el("button", "clear-selection", "Clear Selection");
  clear.addEventListener("click", () => handlers.onClearSelection());
  container.appendChild(clear);
}

export function renderEmptyTrace(container: HTMLElement): void {
  container.textContent = "";
  container.appendChild(el("p", "empty-state", "no matches found"));
}

export function renderDocumentModal(
  container: HTMLElement,
  view: DocumentViewPayload | null,
  error: string | null,
  onClose: () => void,
): void {
  container.textContent = "";
  if (view === null && error === null) {
    container.hidden = true;
    return;
  }
  container.hidden = false;
  const overlay = el("div", "modal-overlay");
  const box = el("div", "modal-box");
  const close = el("button", "modal-close", "close");
  close.addEventListener("click", onClose);
  box.appendChild(close);
  if (error !== null) {
    box.appendChild(el("p", "modal-error", error));
  } else if (view !== null) {
    const head = el("header", "modal-head");
    if (view.source && /^https?:\/\//.test(view.source)) {
      const link = el("a", "doc-source-link", view.source);
      link.setAttribute("href", view.source);
      link.setAttribute("rel", "noopener noreferrer");
      link.setAttribute("target", "_blank");
      head.appendChild(link);
    } else {
      head.appendChild(el("span", "doc-source", view.source || `${view.shard_id}:${view.doc_id}`));
    }
    head.appendChild(el("span", `stage-badge stage-${view.stage}`, view.stage));
    const [lo, hi] = view.window_token_range;
    head.appendChild(el("span", "window-range", `tokens ${lo}-${hi} of ${view.total_doc_tokens}`));
    box.appendChild(head);
    box.appendChild(el("pre", "modal-text", view.text));
  }
  overlay.appendChild(box);
  container.appendChild(overlay);
}

export function renderErrorBanner(container: HTMLElement, message: string | null, raw?: unknown): void {
  container.textContent = "";
  container.hidden = message === null;
  if (message === null) return;
  container.appendChild(el("span", "error-message", message));
  if (raw !== undefined) {
    const download = el("a", "download-raw", "download raw JSON");
    const blob = new Blob([JSON.stringify(raw, null, 2)], { type: "application/json" });
    download.setAttribute("href", URL.createObjectURL(blob));
    download.setAttribute("download", "trace-payload.json");
    container.appendChild(download);
  }
}

export function spanById(trace: TracePayload, id: number): SpanPayload | undefined {
  return trace.spans.find((s) => s.id === id);
}
