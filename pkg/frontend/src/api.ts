/**
 * Thin typed client for the annotation service.
 *
 * Error mapping: HTTP 409 (someone else updated the task) becomes
 * ConflictError so callers can branch on it; every other non-2xx becomes
 * ApiError carrying the service's {code, message, details} body; a failed
 * fetch (service down, network gone) becomes OfflineError.
 */

import type {
  ApiErrorBody,
  ExportResult,
  ImageMeta,
  StatusPayload,
  SubmitBox,
  SubmitPayload,
  TaskPage,
  TaskStatus,
  TaskWire,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: ApiErrorBody,
  ) {
    super(body.message);
    this.name = "ApiError";
  }
}

export class ConflictError extends ApiError {
  constructor(status: number, body: ApiErrorBody) {
    super(status, body);
    this.name = "ConflictError";
  }
}

export class OfflineError extends Error {
  constructor(cause: unknown) {
    super(`service unreachable: ${cause}`);
    this.name = "OfflineError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class AnnotatorApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  async listTasks(status?: TaskStatus, cursor?: string, limit?: number): Promise<TaskPage> {
    const params = new URLSearchParams();
    if (status) params.set("status", status);
    if (limit !== undefined) params.set("limit", String(limit));
    if (cursor) params.set("cursor", cursor);
    const query = params.toString();
    return this.request<TaskPage>("GET", `/api/tasks${query ? `?${query}` : ""}`);
  }

  async getTask(taskId: string): Promise<TaskWire> {
    return this.request<TaskWire>("GET", `/api/tasks/${taskId}`);
  }

  async imageMeta(taskId: string): Promise<ImageMeta> {
    return this.request<ImageMeta>("GET", `/api/images/${taskId}/meta`);
  }

  imageUrl(taskId: string): string {
    return `${this.baseUrl}/api/images/${taskId}`;
  }

  async submitBoxes(
    taskId: string,
    boxes: SubmitBox[],
    expectedRevision: number,
    annotator: string,
  ): Promise<TaskWire> {
    const payload: SubmitPayload = {
      boxes,
      expected_revision: expectedRevision,
      annotator,
    };
    return this.request<TaskWire>("PUT", `/api/tasks/${taskId}/boxes`, payload);
  }

  async setStatus(taskId: string, status: TaskStatus, expectedRevision: number): Promise<TaskWire> {
    const payload: StatusPayload = { status, expected_revision: expectedRevision };
    return this.request<TaskWire>("PUT", `/api/tasks/${taskId}/status`, payload);
  }

  async exportCrops(): Promise<ExportResult> {
    return this.request<ExportResult>("POST", "/api/export");
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`, {
        method,
        headers: body === undefined ? undefined : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new OfflineError(err);
    }
    if (!response.ok) {
      const errorBody = await this.errorBody(response);
      if (response.status === 409) throw new ConflictError(response.status, errorBody);
      throw new ApiError(response.status, errorBody);
    }
    return (await response.json()) as T;
  }

  private async errorBody(response: Response): Promise<ApiErrorBody> {
    try {
      const parsed = (await response.json()) as Partial<ApiErrorBody>;
      return {
        code: parsed.code ?? "error",
        message: parsed.message ?? `HTTP ${response.status}`,
        details: parsed.details ?? [],
      };
    } catch {
      return { code: "error", message: `HTTP ${response.status}`, details: [] };
    }
  }
}
