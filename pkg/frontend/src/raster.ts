// Identity-map wire format: 16-byte header {magic "BGID", version u16, K u16,
// h u32, w u32, little-endian} followed by K float32 planes of h*w weights.

const MAGIC = [0x42, 0x47, 0x49, 0x44]; // "BGID"
export const RASTER_VERSION = 1;

export function encodeIdRaster(weights: Float32Array, K: number, h: number, w: number): Uint8Array {
  if (weights.length !== K * h * w) {
    throw new Error(`weights length ${weights.length} != K*h*w = ${K * h * w}`);
  }
  const out = new Uint8Array(16 + weights.length * 4);
  const view = new DataView(out.buffer);
  MAGIC.forEach((b, i) => view.setUint8(i, b));
  view.setUint16(4, RASTER_VERSION, true);
  view.setUint16(6, K, true);
  view.setUint32(8, h, true);
  view.setUint32(12, w, true);
  for (let i = 0; i < weights.length; i++) {
    view.setFloat32(16 + i * 4, weights[i], true);
  }
  return out;
}

/** One-hot planes from a per-pixel label grid (plane-major, matches the server). */
export function labelsToOneHot(labels: Uint8Array, K: number): Float32Array {
  const n = labels.length;
  const planes = new Float32Array(K * n);
  for (let i = 0; i < n; i++) {
    const k = labels[i];
    if (k >= K) {
      throw new Error(`label ${k} out of range for K=${K}`);
    }
    planes[k * n + i] = 1;
  }
  return planes;
}

export function toBase64(bytes: Uint8Array): string {
  if (typeof btoa === "function") {
    let bin = "";
    const chunk = 0x8000;
    for (let i = 0; i < bytes.length; i += chunk) {
      bin += String.fromCharCode(...bytes.subarray(i, i + chunk));
    }
    return btoa(bin);
  }
  // node (tests)
  return Buffer.from(bytes).toString("base64");
}
