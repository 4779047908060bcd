/** Thin typed client for the /v1 endpoints.
 *
 * The UI never computes heatmaps itself; every numeric result on screen
 * came out of one of these calls. `fetchFn` is injectable so tests can
 * replay recorded server payloads without a network.
 */

import type {
  ExplainRequest,
  ExplainResponse,
  ModelSummary,
  PerturbRequest,
  PerturbResponse,
  Vocab,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

/** Parsed response plus the exact text it was parsed from. */
export interface RawJson<T> {
  body: T;
  raw: string;
}

export type FetchLike = (
  url: string,
  init?: RequestInit,
) => Promise<Response>;

async function readError(resp: Response): Promise<ApiError> {
  let message = `HTTP ${resp.status}`;
  try {
    const body = await resp.json();
    if (body && typeof body.error === "string") message = body.error;
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(resp.status, message);
}

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async get<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(this.base + path);
    if (!resp.ok) throw await readError(resp);
    return (await resp.json()) as T;
  }

  private async post<T>(
    path: string,
    payload: unknown,
    signal?: AbortSignal,
  ): Promise<RawJson<T>> {
    const resp = await this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
      signal,
    });
    if (!resp.ok) throw await readError(resp);
    const raw = await resp.text();
    return { body: JSON.parse(raw) as T, raw };
  }

  models(): Promise<ModelSummary[]> {
    return this.get<ModelSummary[]>("/v1/models");
  }

  vocab(modelId: string): Promise<Vocab> {
    return this.get<Vocab>(`/v1/models/${encodeURIComponent(modelId)}/vocab`);
  }

  explain(
    req: ExplainRequest,
    signal?: AbortSignal,
  ): Promise<RawJson<ExplainResponse>> {
    return this.post<ExplainResponse>("/v1/explain", req, signal);
  }

  async perturb(req: PerturbRequest): Promise<PerturbResponse> {
    const { body } = await this.post<PerturbResponse>("/v1/perturb", req);
    return body;
  }
}
