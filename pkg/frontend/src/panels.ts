import type { GenerateRequest, HistoryEntry } from "./types.js";
import { MaskCanvasModel } from "./maskModel.js";

export const MORPH_PRESET = [0.2, 0.4, 0.6, 0.8];

/** Clamp to >= 0 and normalize K slider positions onto the simplex. */
export function normalizeSimplex(values: number[]): number[] {
  const clamped = values.map((v) => (Number.isFinite(v) && v > 0 ? v : 0));
  const total = clamped.reduce((a, b) => a + b, 0);
  if (total <= 0) {
    return values.map((_, i) => (i === 0 ? 1 : 0));
  }
  return clamped.map((v) => v / total);
}

export function buildSpatialRequest(model: MaskCanvasModel, seed: number): GenerateRequest {
  return { mode: "spatial", seed, id_map: model.toPayload() };
}

export function buildMorphFrameRequest(weights: number[], seed: number): GenerateRequest {
  return { mode: "morph", seed, weights: normalizeSimplex(weights) };
}

export function buildFuseRequest(
  structureK: number,
  textureK: number,
  transitionScale: number,
  seed: number,
): GenerateRequest {
  return {
    mode: "fuse",
    seed,
    structure_k: structureK,
    texture_k: textureK,
    transition_scale: transitionScale,
  };
}

/** Side-by-side fusion strip: one request per chosen scale, seed pinned. */
export function buildFusionStrip(
  structureK: number,
  textureK: number,
  scales: number[],
  seed: number,
): GenerateRequest[] {
  return scales.map((s) => buildFuseRequest(structureK, textureK, s, seed));
}

export class SessionHistory {
  private entries: HistoryEntry[] = [];

  add(request: GenerateRequest, image: string): HistoryEntry {
    const entry: HistoryEntry = {
      request: JSON.parse(JSON.stringify(request)) as GenerateRequest,
      seed: request.seed,
      image,
      at: this.entries.length,
    };
    this.entries.push(entry);
    return entry;
  }

  get length(): number {
    return this.entries.length;
  }

  at(index: number): HistoryEntry {
    const entry = this.entries[index];
    if (!entry) {
      throw new Error(`no history entry ${index}`);
    }
    return entry;
  }

  /** Everything needed to reproduce the entry: the request JSON (with seed). */
  exportEntry(index: number): string {
    const { request, seed } = this.at(index);
    return JSON.stringify({ request, seed }, null, 1);
  }
}

/** Fixed palette, index-aligned with the service identities. */
export const IDENTITY_PALETTE = [
  "#e63b2e", "#2e7de6", "#34a853", "#fbbc04",
  "#9c27b0", "#00acc1", "#ff7043", "#7cb342",
];

export function identityColor(k: number): string {
  return IDENTITY_PALETTE[k % IDENTITY_PALETTE.length];
}
