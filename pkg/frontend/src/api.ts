import { z } from "zod";
import {
  CommitRequest,
  CommitResponseSchema,
  ErrorBodySchema,
  RecordPayload,
  RecordSchema,
  SolveRequest,
  SolveResponse,
  SolveResponseSchema,
} from "./schema";

/** Error body surfaced by the backend: {code, message} plus HTTP status. */
export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

const RecordListSchema = z.array(RecordSchema);

export interface ListFilter {
  category?: string;
  truncated?: boolean;
  occluded?: boolean;
}

/**
 * Thin typed wrapper over the service endpoints. All responses are
 * schema-validated; non-2xx responses become ServiceError.
 */
export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async request<S extends z.ZodType>(
    schema: S,
    path: string,
    init?: RequestInit,
  ): Promise<z.infer<S>> {
    const res = await this.fetchFn(this.baseUrl + path, init);
    let body: unknown;
    try {
      body = await res.json();
    } catch {
      throw new ServiceError(res.status, "BadResponse", "response is not JSON");
    }
    if (!res.ok) {
      const parsed = ErrorBodySchema.safeParse(body);
      if (parsed.success) {
        throw new ServiceError(res.status, parsed.data.code, parsed.data.message);
      }
      throw new ServiceError(res.status, "HttpError", `HTTP ${res.status}`);
    }
    return schema.parse(body);
  }

  listRecords(filter: ListFilter = {}): Promise<RecordPayload[]> {
    const q = new URLSearchParams();
    if (filter.category !== undefined) q.set("category", filter.category);
    if (filter.truncated !== undefined) q.set("truncated", String(filter.truncated));
    if (filter.occluded !== undefined) q.set("occluded", String(filter.occluded));
    const qs = q.toString();
    return this.request(RecordListSchema, `/records${qs ? `?${qs}` : ""}`);
  }

  getRecord(id: string): Promise<RecordPayload> {
    return this.request(RecordSchema, `/records/${encodeURIComponent(id)}`);
  }

  solve(id: string, body: SolveRequest, sessionId: string): Promise<SolveResponse> {
    return this.request(SolveResponseSchema, `/records/${encodeURIComponent(id)}/solve`, {
      method: "POST",
      headers: { "Content-Type": "application/json", "X-Session-Id": sessionId },
      body: JSON.stringify(body),
    });
  }

  async commit(id: string, body: CommitRequest, sessionId: string): Promise<RecordPayload> {
    const res = await this.request(
      CommitResponseSchema,
      `/records/${encodeURIComponent(id)}/commit`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json", "X-Session-Id": sessionId },
        body: JSON.stringify(body),
      },
    );
    return res.record;
  }
}
