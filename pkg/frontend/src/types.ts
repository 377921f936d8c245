export interface ModelInfo {
  model_id: string;
  K: number;
  scale_count: number;
  thumbnails: string[]; // base64 PNGs
}

export type NoiseMode = "random" | "reconstruction" | "mixed";

export interface IdMapPayload {
  kind: "constant" | "blend" | "ramp" | "mask";
  k?: number;
  weights?: number[];
  axis?: "horizontal" | "vertical";
  a?: number;
  b?: number;
  raster_base64?: string;
  png_base64?: string;
  faithful?: number[];
}

export interface GenerateRequest {
  mode: "sample" | "meld" | "morph" | "fuse" | "spatial" | "edit";
  seed: number;
  size?: [number, number];
  noise?: NoiseMode;
  id_map?: IdMapPayload;
  weights?: number[];
  structure_k?: number;
  texture_k?: number;
  transition_scale?: number;
  [extra: string]: unknown;
}

export interface GenerateResponse {
  image: string; // base64 PNG
  request_echo: Record<string, unknown>;
}

export interface MorphResponse {
  frames: string[];
}

export interface HistoryEntry {
  request: GenerateRequest;
  seed: number;
  image: string;
  at: number;
}
