/** Thin client for the tracing service. */

import type { DocumentViewPayload, TracePayload } from "./types";
import { isTracePayload } from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }

  /** 503 means the index is still loading; worth offering a retry. */
  get retryable(): boolean {
    return this.status === 503;
  }
}

export class SchemaError extends Error {
  constructor(public raw: unknown) {
    super("trace payload does not match the expected schema");
  }
}

async function errorFrom(response: Response): Promise<ApiError> {
  let code = "http_error";
  let message = `request failed with status ${response.status}`;
  try {
    const body = (await response.json()) as { error?: { code?: string; message?: string } };
    if (body.error) {
      code = body.error.code ?? code;
      message = body.error.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the generic message
  }
  return new ApiError(response.status, code, message);
}

export class TraceApi {
  constructor(
    private baseUrl = "",
    private fetchFn: typeof fetch = fetch,
  ) {}

  async trace(prompt: string, response: string, seed?: number, signal?: AbortSignal): Promise<TracePayload> {
    const body: Record<string, unknown> = { prompt, response };
    if (seed !== undefined) {
      body.options = { seed };
    }
    const res = await this.fetchFn(`${this.baseUrl}/api/v1/trace`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!res.ok) {
      throw await errorFrom(res);
    }
    const payload: unknown = await res.json();
    if (!isTracePayload(payload)) {
      throw new SchemaError(payload);
    }
    return payload;
  }

  async viewDocument(
    shardId: number,
    docId: number,
    center?: number,
    window = 500,
  ): Promise<DocumentViewPayload> {
    const params = new URLSearchParams({ window: String(window) });
    if (center !== undefined) {
      params.set("center", String(center));
    }
    const res = await this.fetchFn(
      `${this.baseUrl}/api/v1/docs/${shardId}/${docId}?${params.toString()}`,
    );
    if (!res.ok) {
      throw await errorFrom(res);
    }
    return (await res.json()) as DocumentViewPayload;
  }
}
