import type {
  AcquisitionMethod,
  CheckpointEntry,
  Click,
  CreateSessionResponse,
  ImageEntry,
  PredictionResponse,
  QueriesResponse,
  RefineMode,
  RefineResponse,
  ResetResponse,
  SessionRequest,
  SessionSummary,
  UncertaintyResponse,
  UndoResponse,
} from "./types";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = typeof fetch;

/**
 * Thin typed client over the session service.
 *
 * Mutating calls are single-flight per (session, verb): a second submission
 * while the first is still in the air joins the pending promise instead of
 * issuing a duplicate request. That is the client-side request token — a
 * double-clicked "refine" button costs one refine.
 */
export class ServiceClient {
  private inFlight = new Map<string, Promise<unknown>>();

  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await response.json();
    if (!response.ok) {
      const detail = (payload as { error?: { code?: string; message?: string } }).error;
      throw new ApiError(
        response.status,
        detail?.code ?? "unknown_error",
        detail?.message ?? `HTTP ${response.status} on ${path}`,
      );
    }
    return payload as T;
  }

  private mutate<T>(token: string, run: () => Promise<T>): Promise<T> {
    const pending = this.inFlight.get(token);
    if (pending) return pending as Promise<T>;
    const started = run().finally(() => this.inFlight.delete(token));
    this.inFlight.set(token, started);
    return started;
  }

  async listImages(): Promise<ImageEntry[]> {
    const payload = await this.request<{ images: ImageEntry[] }>("GET", "/images");
    return payload.images;
  }

  async listCheckpoints(): Promise<CheckpointEntry[]> {
    const payload = await this.request<{ checkpoints: CheckpointEntry[] }>(
      "GET", "/checkpoints");
    return payload.checkpoints;
  }

  createSession(body: SessionRequest): Promise<CreateSessionResponse> {
    return this.request("POST", "/sessions", body);
  }

  getSession(sessionId: string): Promise<SessionSummary> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  submitClicks(sessionId: string, clicks: Click[]): Promise<SessionSummary> {
    return this.mutate(`${sessionId}:clicks`, () =>
      this.request("POST", `/sessions/${sessionId}/clicks`, { clicks }));
  }

  refine(sessionId: string, mode: RefineMode): Promise<RefineResponse> {
    return this.mutate(`${sessionId}:refine`, () =>
      this.request("POST", `/sessions/${sessionId}/refine`, { mode }));
  }

  getPrediction(sessionId: string): Promise<PredictionResponse> {
    return this.request("GET", `/sessions/${sessionId}/prediction`);
  }

  getUncertainty(
    sessionId: string,
    method: AcquisitionMethod = "entropy",
  ): Promise<UncertaintyResponse> {
    return this.request("GET", `/sessions/${sessionId}/uncertainty?method=${method}`);
  }

  getQueries(
    sessionId: string,
    strategy: AcquisitionMethod = "entropy",
    k = 5,
  ): Promise<QueriesResponse> {
    return this.request(
      "GET", `/sessions/${sessionId}/queries?strategy=${strategy}&k=${k}`);
  }

  undo(sessionId: string): Promise<UndoResponse> {
    return this.mutate(`${sessionId}:undo`, () =>
      this.request("POST", `/sessions/${sessionId}/undo`));
  }

  reset(sessionId: string): Promise<ResetResponse> {
    return this.mutate(`${sessionId}:reset`, () =>
      this.request("POST", `/sessions/${sessionId}/reset`));
  }
}
