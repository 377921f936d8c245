import { describe, expect, it } from "vitest";

import { MaskCanvasModel, validatePartition } from "../src/maskModel.js";

describe("MaskCanvasModel", () => {
  it("starts as a full-canvas identity-0 partition", () => {
    const m = new MaskCanvasModel(16, 12, 3);
    expect(validatePartition(m.layers(), 3)).toBeNull();
    expect([...m.labels].every((l) => l === 0)).toBe(true);
  });

  it("resolves overlapping strokes last-stroke-wins", () => {
    const m = new MaskCanvasModel(20, 20, 3);
    m.applyStroke({ x: 10, y: 10, radius: 6, identity: 1, faithful: false });
    m.applyStroke({ x: 10, y: 10, radius: 3, identity: 2, faithful: false });
    expect(m.labels[10 * 20 + 10]).toBe(2); // inner disk repainted
    expect(m.labels[10 * 20 + 15]).toBe(1); // outer ring keeps first stroke
    expect(validatePartition(m.layers(), 3)).toBeNull();
  });

  it("never produces an invalid partition under fuzzed strokes", () => {
    let state = 123456789;
    const rand = () => {
      // deterministic LCG so failures reproduce
      state = (state * 1103515245 + 12345) & 0x7fffffff;
      return state / 0x7fffffff;
    };
    for (let trial = 0; trial < 25; trial++) {
      const K = 2 + Math.floor(rand() * 4);
      const m = new MaskCanvasModel(24, 18, K);
      const strokes = Math.floor(rand() * 40);
      for (let s = 0; s < strokes; s++) {
        m.applyStroke({
          x: rand() * 30 - 3, // deliberately allows off-canvas centers
          y: rand() * 24 - 3,
          radius: rand() * 10,
          identity: Math.floor(rand() * K),
          faithful: rand() > 0.5,
        });
      }
      expect(validatePartition(m.layers(), K)).toBeNull();
      expect(() => m.toPayload()).not.toThrow();
    }
  });

  it("rejects out-of-range identities", () => {
    const m = new MaskCanvasModel(8, 8, 2);
    expect(() => m.applyStroke({ x: 1, y: 1, radius: 1, identity: 2, faithful: false })).toThrow(
      /out of range/,
    );
  });

  it("tracks faithful identities per stroke toggle", () => {
    const m = new MaskCanvasModel(8, 8, 2);
    m.applyStroke({ x: 2, y: 2, radius: 2, identity: 1, faithful: true });
    expect(m.faithfulIdentities()).toEqual([1]);
    m.applyStroke({ x: 6, y: 6, radius: 1, identity: 1, faithful: false });
    expect(m.faithfulIdentities()).toEqual([]);
  });

  it("fill covers the whole canvas with one identity", () => {
    const m = new MaskCanvasModel(6, 6, 2);
    m.fill(1, true);
    expect([...m.labels].every((l) => l === 1)).toBe(true);
    expect(m.faithfulIdentities()).toEqual([1]);
  });
});

describe("validatePartition", () => {
  it("names overlaps and gaps", () => {
    const a = new Uint8Array([1, 1, 0, 0]);
    const b = new Uint8Array([1, 0, 0, 1]);
    expect(validatePartition([a, b], 2)).toMatch(/1 pixels overlap, 1 uncovered/);
  });

  it("accepts an exact partition", () => {
    const a = new Uint8Array([1, 0, 1, 0]);
    const b = new Uint8Array([0, 1, 0, 1]);
    expect(validatePartition([a, b], 2)).toBeNull();
  });

  it("rejects layer-count mismatch", () => {
    expect(validatePartition([new Uint8Array(4)], 2)).toMatch(/expected 2 layers/);
  });
});
