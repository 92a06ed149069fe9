// Wire types for the session service. Field names mirror the JSON payloads
// verbatim; the console never derives numbers the server did not send.

export type RGB = [number, number, number];

export type RefineMode = "ac_only" | "disca";

export type WeightPolicy = "reset_per_image" | "sequential";

export type AcquisitionMethod = "entropy" | "confidnet" | "odin" | "mc_dropout";

export interface Click {
  row: number;
  col: number;
  class_id: number;
}

export interface SessionSummary {
  session_id: string;
  image_id: string;
  checkpoint_id: string;
  shape: [number, number];
  class_count: number;
  weight_policy: WeightPolicy;
  clicks: number;
  refines: number;
  snapshot_depth: number;
  config_hash: string;
  state_hash: string;
}

export interface CreateSessionResponse extends SessionSummary {
  initial_mean_entropy: number;
}

export interface RefineResponse extends SessionSummary {
  mode: RefineMode;
}

export interface UndoResponse extends SessionSummary {
  undone: boolean;
  weights_restored?: boolean;
}

export interface ResetResponse extends SessionSummary {
  reset: boolean;
}

export interface PredictionResponse {
  class_map: number[][];
  palette: RGB[];
  shape: [number, number];
  config_hash: string;
}

export interface UncertaintyResponse {
  method: AcquisitionMethod;
  scores: number[][];
  wall_time: number;
  config_hash: string;
}

// window is [row, col, height, width] of the queried patch
export interface PatchQuery {
  window: [number, number, number, number];
  score: number;
  rank: number;
}

export interface QueriesResponse {
  strategy: AcquisitionMethod;
  queries: PatchQuery[];
  config_hash: string;
}

export interface ImageEntry {
  image_id: string;
  shape: [number, number];
}

export interface CheckpointEntry {
  checkpoint_id: string;
  class_count: number;
}

export interface SessionRequest {
  checkpoint_id: string;
  image_id: string;
  weight_policy?: WeightPolicy;
  refresh_p0?: boolean;
  encoding?: Record<string, unknown>;
  disca?: Record<string, unknown>;
  tile_size?: number;
  overlap?: number;
}
