/** Session state and request discipline.
 *
 * One explain request may be in flight at a time: issuing a new one
 * aborts its predecessor, and every response carries the sequence
 * number it was issued under, so a late arrival from a superseded
 * request is discarded instead of clobbering newer state. Threshold
 * changes never touch the network; they only re-render the last
 * response.
 */

import { ApiClient, ApiError } from "./api.js";
import type {
  ExplainRequest,
  ExplainResponse,
  Method,
  ModelSummary,
  PerturbResponse,
  Query,
} from "./types.js";
import { METHODS } from "./types.js";
import { fnv1a64Hex } from "./hash.js";
import type { Pixels } from "./pixels.js";

export interface LoadedImage {
  name: string;
  base64: string;
  pixels: Pixels;
}

export interface MethodTile {
  method: Method;
  response?: ExplainResponse;
  error?: string;
}

export interface SessionState {
  models: ModelSummary[];
  modelId: string | null;
  image: LoadedImage | null;
  query: Query | null;
  method: Method;
  /** null means "let the server pick its default range" */
  layerRange: number[] | null;
  rangeText: string;
  rangeValid: boolean;
  threshold: number;
  binarized: boolean;
  suppressBackground: boolean;
  pending: boolean;
  lastExplain: ExplainResponse | null;
  /** fingerprint of the exact response text lastExplain was parsed from */
  payloadHash: string | null;
  lastCurve: PerturbResponse | null;
  compare: MethodTile[] | null;
  error: string | null;
}

/** Parse a range string: "default", "all", "3", "2-4", "1,3".
 *
 * Returns null for the server default, a sorted list of layers, or
 * undefined when the text is malformed or out of [1, layers].
 */
export function parseLayerRange(
  text: string,
  layers: number,
): number[] | null | undefined {
  const t = text.trim().toLowerCase();
  if (t === "" || t === "default") return null;
  let picked: number[];
  if (t === "all") {
    picked = Array.from({ length: layers }, (_, i) => i + 1);
  } else {
    const m = t.match(/^(\d+)\s*-\s*(\d+)$/);
    if (m) {
      const lo = parseInt(m[1], 10);
      const hi = parseInt(m[2], 10);
      if (lo > hi) return undefined;
      picked = Array.from({ length: hi - lo + 1 }, (_, i) => lo + i);
    } else {
      const parts = t.split(",").map((p) => p.trim());
      if (parts.some((p) => !/^\d+$/.test(p))) return undefined;
      picked = [...new Set(parts.map((p) => parseInt(p, 10)))].sort(
        (a, b) => a - b,
      );
    }
  }
  if (picked.length === 0) return undefined;
  if (picked.some((l) => l < 1 || l > layers)) return undefined;
  return picked;
}

type Listener = (state: SessionState) => void;

export class SessionController {
  state: SessionState = {
    models: [],
    modelId: null,
    image: null,
    query: null,
    method: "legrad",
    layerRange: null,
    rangeText: "default",
    rangeValid: true,
    threshold: 0.5,
    binarized: false,
    suppressBackground: false,
    pending: false,
    lastExplain: null,
    payloadHash: null,
    lastCurve: null,
    compare: null,
    error: null,
  };

  /** Count of explain requests issued; doubles as the sequence number. */
  requestCount = 0;

  private seq = 0;
  private inflight: AbortController | null = null;
  private listeners: Listener[] = [];

  constructor(private client: ApiClient) {}

  onChange(cb: Listener): void {
    this.listeners.push(cb);
  }

  private emit(): void {
    for (const cb of this.listeners) cb(this.state);
  }

  private patch(p: Partial<SessionState>): void {
    Object.assign(this.state, p);
    this.emit();
  }

  async loadModels(): Promise<void> {
    const models = await this.client.models();
    const firstOk = models.find((m) => m.status === "ok");
    this.patch({ models, modelId: firstOk ? firstOk.id : null });
  }

  currentModel(): ModelSummary | undefined {
    return this.state.models.find((m) => m.id === this.state.modelId);
  }

  setModel(id: string): void {
    this.patch({ modelId: id, lastExplain: null, payloadHash: null,
                 lastCurve: null, compare: null });
    this.setRangeText(this.state.rangeText); // revalidate against new depth
  }

  setImage(image: LoadedImage): void {
    this.patch({ image });
  }

  setQuery(query: Query): void {
    this.patch({ query });
  }

  /** Method switch re-explains immediately (a new request, by design). */
  setMethod(method: Method): Promise<void> {
    this.patch({ method });
    return this.explain();
  }

  /** Threshold movement re-renders client-side; no network traffic. */
  setThreshold(threshold: number): void {
    if (threshold < 0 || threshold > 1) throw new Error("threshold must be in [0, 1]");
    this.patch({ threshold });
  }

  setBinarized(binarized: boolean): void {
    this.patch({ binarized });
  }

  setSuppressBackground(on: boolean): void {
    this.patch({ suppressBackground: on });
  }

  /** Validate the range text against the current model's depth. */
  setRangeText(text: string): void {
    const layers = this.currentModel()?.config?.layers ?? 0;
    const parsed = parseLayerRange(text, layers);
    if (parsed === undefined) {
      this.patch({ rangeText: text, rangeValid: false });
    } else {
      this.patch({ rangeText: text, rangeValid: true, layerRange: parsed });
    }
  }

  /** Apply a new (valid) range: issues a fresh explain request. */
  applyRange(text: string): Promise<void> {
    this.setRangeText(text);
    if (!this.state.rangeValid) return Promise.resolve();
    return this.explain();
  }

  private buildRequest(method: Method): ExplainRequest {
    const { modelId, image, query } = this.state;
    if (!modelId || !image || !query) {
      throw new Error("model, image and query must all be set");
    }
    const req: ExplainRequest = {
      model_id: modelId,
      image: image.base64,
      query,
      method,
    };
    if (this.state.layerRange !== null) req.layer_range = this.state.layerRange;
    if (this.state.suppressBackground) req.suppress_background = true;
    return req;
  }

  async explain(): Promise<void> {
    if (!this.state.modelId || !this.state.image || !this.state.query) return;
    if (!this.state.rangeValid) return;

    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    const mySeq = ++this.seq;
    this.requestCount++;
    this.patch({ pending: true, error: null });

    try {
      const { body, raw } = await this.client.explain(
        this.buildRequest(this.state.method),
        controller.signal,
      );
      if (mySeq !== this.seq) return; // superseded while in flight
      this.patch({
        lastExplain: body,
        payloadHash: fnv1a64Hex(raw),
        pending: false,
      });
    } catch (err) {
      if (mySeq !== this.seq) return; // stale failure, newer request owns the UI
      if ((err as Error).name === "AbortError") return;
      const msg = err instanceof ApiError ? err.message : String(err);
      this.patch({ pending: false, error: msg });
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }

  async perturb(mode: "positive" | "negative" = "positive"): Promise<void> {
    if (!this.state.modelId || !this.state.image || !this.state.query) return;
    try {
      const curve = await this.client.perturb({
        ...this.buildRequest(this.state.method),
        mode,
      });
      this.patch({ lastCurve: curve, error: null });
    } catch (err) {
      const msg = err instanceof ApiError ? err.message : String(err);
      this.patch({ error: msg });
    }
  }

  /** One tile per method. Requests run one at a time (the session-wide
   * single-flight rule); a failing method becomes an inline tile error
   * and never sinks the rest of the grid. */
  async compareMethods(): Promise<void> {
    if (!this.state.modelId || !this.state.image || !this.state.query) return;
    const tiles: MethodTile[] = [];
    this.patch({ compare: null, pending: true });
    for (const method of METHODS) {
      try {
        const { body } = await this.client.explain(this.buildRequest(method));
        tiles.push({ method, response: body });
      } catch (err) {
        const msg = err instanceof ApiError ? err.message : String(err);
        tiles.push({ method, error: msg });
      }
    }
    this.patch({ compare: tiles, pending: false });
  }
}
