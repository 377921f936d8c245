import { encodeIdRaster, labelsToOneHot, toBase64 } from "./raster.js";
import type { IdMapPayload } from "./types.js";

export interface Stroke {
  x: number;
  y: number;
  radius: number;
  identity: number;
  faithful: boolean;
}

/**
 * Per-pixel identity labels painted with round brushes.
 *
 * Every pixel always carries exactly one label (background = identity 0), so
 * the partition rule the server enforces holds by construction; overlapping
 * strokes resolve last-stroke-wins.
 */
export class MaskCanvasModel {
  readonly width: number;
  readonly height: number;
  readonly K: number;
  readonly labels: Uint8Array;
  private faithfulIds: Set<number> = new Set();

  constructor(width: number, height: number, K: number) {
    if (K < 1 || K > 255) {
      throw new Error(`K must be in 1..255, got ${K}`);
    }
    if (width < 1 || height < 1) {
      throw new Error(`degenerate canvas ${width}x${height}`);
    }
    this.width = width;
    this.height = height;
    this.K = K;
    this.labels = new Uint8Array(width * height); // all identity 0
  }

  applyStroke(stroke: Stroke): void {
    const { x, y, radius, identity } = stroke;
    if (identity < 0 || identity >= this.K) {
      throw new Error(`identity ${identity} out of range for K=${this.K}`);
    }
    const r = Math.max(0, radius);
    const r2 = r * r;
    const x0 = Math.max(0, Math.floor(x - r));
    const x1 = Math.min(this.width - 1, Math.ceil(x + r));
    const y0 = Math.max(0, Math.floor(y - r));
    const y1 = Math.min(this.height - 1, Math.ceil(y + r));
    for (let py = y0; py <= y1; py++) {
      for (let px = x0; px <= x1; px++) {
        const dx = px - x;
        const dy = py - y;
        if (dx * dx + dy * dy <= r2) {
          this.labels[py * this.width + px] = identity;
        }
      }
    }
    if (stroke.faithful) {
      this.faithfulIds.add(identity);
    } else {
      this.faithfulIds.delete(identity);
    }
  }

  fill(identity: number, faithful = false): void {
    if (identity < 0 || identity >= this.K) {
      throw new Error(`identity ${identity} out of range for K=${this.K}`);
    }
    this.labels.fill(identity);
    this.faithfulIds = faithful ? new Set([identity]) : new Set();
  }

  faithfulIdentities(): number[] {
    return [...this.faithfulIds].sort((a, b) => a - b);
  }

  /** Identity layers as K boolean planes (for validation and previews). */
  layers(): Uint8Array[] {
    const planes: Uint8Array[] = [];
    for (let k = 0; k < this.K; k++) {
      planes.push(new Uint8Array(this.labels.length));
    }
    for (let i = 0; i < this.labels.length; i++) {
      planes[this.labels[i]][i] = 1;
    }
    return planes;
  }

  toPayload(): IdMapPayload {
    const violation = validatePartition(this.layers(), this.K);
    if (violation) {
      throw new Error(`refusing to submit an invalid mask: ${violation}`);
    }
    const planes = labelsToOneHot(this.labels, this.K);
    const raster = encodeIdRaster(planes, this.K, this.height, this.width);
    const payload: IdMapPayload = { kind: "mask", raster_base64: toBase64(raster) };
    const faithful = this.faithfulIdentities();
    if (faithful.length > 0) {
      payload.faithful = faithful;
    }
    return payload;
  }
}

/**
 * The same partition rule the service enforces: every pixel covered by
 * exactly one layer. Returns a violation description, or null when valid.
 */
export function validatePartition(layers: Uint8Array[], K: number): string | null {
  if (layers.length !== K) {
    return `expected ${K} layers, got ${layers.length}`;
  }
  if (K === 0) {
    return "no identity layers";
  }
  const n = layers[0].length;
  for (const layer of layers) {
    if (layer.length !== n) {
      return "layers disagree on pixel count";
    }
  }
  let overlap = 0;
  let uncovered = 0;
  for (let i = 0; i < n; i++) {
    let owners = 0;
    for (let k = 0; k < K; k++) {
      if (layers[k][i]) owners++;
    }
    if (owners > 1) overlap++;
    if (owners === 0) uncovered++;
  }
  if (overlap || uncovered) {
    return `${overlap} pixels overlap, ${uncovered} uncovered`;
  }
  return null;
}
