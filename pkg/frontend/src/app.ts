/** Application wiring: submit form, state updates, re-render. */

import { ApiError, SchemaError, TraceApi } from "./api";
import {
  clearSelection,
  initialState,
  selectDocument,
  selectSpan,
  setPage,
  setTrace,
  type ViewState,
} from "./state";
import {
  renderDocumentModal,
  renderDocumentPanel,
  renderErrorBanner,
  renderResponse,
  renderSelectionBar,
  type Handlers,
} from "./render";
import type { DocumentPayload, DocumentViewPayload } from "./types";

interface Elements {
  form: HTMLFormElement;
  prompt: HTMLTextAreaElement;
  response: HTMLTextAreaElement;
  submit: HTMLButtonElement;
  status: HTMLElement;
  errorBanner: HTMLElement;
  responseView: HTMLElement;
  selectionBar: HTMLElement;
  documentPanel: HTMLElement;
  modal: HTMLElement;
}

export class ExplorerApp {
  state: ViewState = initialState();
  responseText = "";
  private inflight: AbortController | null = null;
  private modalView: DocumentViewPayload | null = null;
  private modalError: string | null = null;

  constructor(
    private elements: Elements,
    private api: TraceApi,
  ) {
    elements.form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submit();
    });
  }

  private handlers(): Handlers {
    return {
      onSelectSpan: (id) => {
        this.state = selectSpan(this.state, id);
        this.render();
      },
      onSelectDocument: (id) => {
        this.state = selectDocument(this.state, id);
        this.render();
      },
      onClearSelection: () => {
        this.state = clearSelection(this.state);
        this.render();
      },
      onViewDocument: (doc) => void this.openDocument(doc),
      onPage: (page) => {
        this.state = setPage(this.state, page);
        this.render();
      },
    };
  }

  async submit(): Promise<void> {
    const prompt = this.elements.prompt.value;
    const response = this.elements.response.value;
    if (!response) {
      renderErrorBanner(this.elements.errorBanner, "the response field must not be empty");
      return;
    }
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    this.setLoading(true);
    renderErrorBanner(this.elements.errorBanner, null);
    try {
      const trace = await this.api.trace(prompt, response, undefined, controller.signal);
      if (controller.signal.aborted) return;
      this.responseText = response;
      this.state = setTrace(this.state, trace);
      this.render();
    } catch (err) {
      if (controller.signal.aborted) return;
      if (err instanceof SchemaError) {
        renderErrorBanner(this.elements.errorBanner, err.message, err.raw);
      } else if (err instanceof ApiError) {
        const suffix = err.retryable ? " - the index may still be loading; try again" : "";
        renderErrorBanner(this.elements.errorBanner, `${err.code}: ${err.message}${suffix}`);
      } else {
        renderErrorBanner(this.elements.errorBanner, String(err));
      }
    } finally {
      if (this.inflight === controller) {
        this.inflight = null;
        this.setLoading(false);
      }
    }
  }

  async openDocument(doc: DocumentPayload): Promise<void> {
    const [lo, hi] = doc.snippet_token_range;
    const center = Math.floor((lo + hi) / 2);
    try {
      this.modalView = await this.api.viewDocument(doc.shard_id, doc.doc_id, center, 500);
      this.modalError = null;
    } catch (err) {
      this.modalView = null;
      this.modalError =
        err instanceof ApiError && err.status === 404
          ? "document unavailable"
          : `could not load document: ${String(err instanceof Error ? err.message : err)}`;
    }
    this.renderModal();
  }

  closeModal(): void {
    this.modalView = null;
    this.modalError = null;
    this.renderModal();
  }

  private renderModal(): void {
    renderDocumentModal(this.elements.modal, this.modalView, this.modalError, () => this.closeModal());
  }

  private setLoading(loading: boolean): void {
    this.elements.submit.disabled = loading;
    this.elements.status.textContent = loading ? "tracing..." : "";
  }

  render(): void {
    const handlers = this.handlers();
    renderResponse(this.elements.responseView, this.responseText, this.state, handlers);
    renderSelectionBar(this.elements.selectionBar, this.state, handlers);
    renderDocumentPanel(this.elements.documentPanel, this.state, handlers);
    if (this.state.trace && this.state.trace.spans.length === 0) {
      this.elements.responseView.textContent = "";
      const note = document.createElement("p");
      note.className = "empty-state";
      note.textContent = "no matches found";
      this.elements.responseView.appendChild(note);
      const raw = document.createElement("pre");
      raw.className = "raw-response";
      raw.textContent = this.responseText;
      this.elements.responseView.appendChild(raw);
    }
  }
}

export function mount(root: Document, api = new TraceApi()): ExplorerApp {
  const byId = <T extends HTMLElement>(id: string): T => {
    const node = root.getElementById(id);
    if (!node) throw new Error(`missing #${id}`);
    return node as T;
  };
  return new ExplorerApp(
    {
      form: byId<HTMLFormElement>("trace-form"),
      prompt: byId<HTMLTextAreaElement>("prompt-input"),
      response: byId<HTMLTextAreaElement>("response-input"),
      submit: byId<HTMLButtonElement>("submit-trace"),
      status: byId("status-line"),
      errorBanner: byId("error-banner"),
      responseView: byId("response-view"),
      selectionBar: byId("selection-bar"),
      documentPanel: byId("document-panel"),
      modal: byId("document-modal"),
    },
    api,
  );
}
