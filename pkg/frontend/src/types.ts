/** Wire types for the /v1 API. Field names mirror docs/api.md exactly. */

export type Method =
  | "legrad"
  | "raw_attention"
  | "rollout"
  | "gradcam"
  | "attentioncam";

export const METHODS: Method[] = [
  "legrad",
  "raw_attention",
  "rollout",
  "gradcam",
  "attentioncam",
];

/** Exactly one key must be set. */
export interface Query {
  label?: string;
  class_index?: number;
  embedding_name?: string;
}

export interface ExplainRequest {
  model_id?: string;
  image: string; // base64 PNG/JPEG
  query: Query;
  method?: Method;
  layer_range?: number[];
  suppress_background?: boolean;
  include_timing?: boolean;
}

export interface LayerSummary {
  layer: number;
  score: number;
  max: number;
  mean: number;
}

export interface ExplainResponse {
  method: string;
  layer_range: number[];
  patch_grid: number[][];
  W: number;
  H: number;
  values: number[][]; // H rows of W floats in [0, 1]
  score: number;
  model_id: string;
  provenance: Record<string, unknown>;
  layer_summaries: LayerSummary[];
  png_base64: string;
  timing_ms?: number;
}

export interface PerturbRequest extends ExplainRequest {
  mode?: "positive" | "negative";
  class_source?: "predicted" | "target";
  auc_rule?: "mean" | "trapezoid";
}

export interface PerturbResponse {
  fractions: number[];
  accuracies: number[];
  mode: string;
  class_source: string;
  auc: number;
  method: string;
}

export interface ModelSummary {
  id: string;
  status: "ok" | "invalid";
  config?: {
    layers: number;
    heads: number;
    width: number;
    patch_size: number;
    image_size: number;
    pooling: string;
    num_patches: number;
  };
  classifier?: { kind: string; num_classes: number };
  embeddings?: string[];
  provenance?: Record<string, unknown>;
  error?: string;
}

export interface Vocab {
  kind: string;
  labels: string[];
  embeddings: string[];
}
