import { describe, expect, it } from "vitest";
import {
  binarize,
  makePixels,
  montage,
  renderHeat,
  renderOverlay,
} from "../src/pixels.js";
import { grayImage } from "./helpers.js";

describe("binarize", () => {
  it("uses strict greater-than, like the engine", () => {
    const out = binarize(
      [
        [0.5, 0.51],
        [0.49, 1.0],
      ],
      0.5,
    );
    expect(out).toEqual([
      [false, true],
      [false, true],
    ]);
  });
});

describe("renderOverlay", () => {
  const values = [
    [1.0, 0.0],
    [0.0, 0.0],
  ];

  it("blends a red tint weighted by the continuous value", () => {
    const base = grayImage(2, 2, 100);
    const out = renderOverlay(base, values, {
      alpha: 0.6,
      threshold: 0.5,
      binarized: false,
    });
    // hot pixel: 0.4 * base + 0.6 * (255, 0, 0)
    expect([out.rgba[0], out.rgba[1], out.rgba[2]]).toEqual([193, 40, 40]);
    // cold pixel untouched, alpha forced opaque
    expect([out.rgba[4], out.rgba[5], out.rgba[6], out.rgba[7]]).toEqual([
      100, 100, 100, 255,
    ]);
  });

  it("binarized mode tints at full alpha above threshold only", () => {
    const base = grayImage(2, 2, 100);
    const mid = [
      [0.5, 0.51],
      [0.0, 0.0],
    ];
    const out = renderOverlay(base, mid, {
      alpha: 0.6,
      threshold: 0.5,
      binarized: true,
    });
    expect(out.rgba[0]).toBe(100); // 0.5 is not > 0.5
    expect(out.rgba[4]).toBe(193); // 0.51 is
  });

  it("produces a non-empty overlay when the map is non-constant", () => {
    const base = grayImage(2, 2, 100);
    const out = renderOverlay(base, values, {
      alpha: 0.6,
      threshold: 0.5,
      binarized: false,
    });
    expect(out.rgba).not.toEqual(base.rgba);
  });

  it("scales heat to the base resolution with nearest neighbor", () => {
    const base = grayImage(4, 4, 0);
    const out = renderOverlay(base, values, {
      alpha: 1.0,
      threshold: 0.5,
      binarized: false,
    });
    // top-left 2x2 block maps to values[0][0] = 1 -> pure red
    for (const [x, y] of [
      [0, 0],
      [1, 1],
    ]) {
      expect(out.rgba[(y * 4 + x) * 4]).toBe(255);
    }
    // bottom-right block maps to values[1][1] = 0 -> untouched black
    expect(out.rgba[(3 * 4 + 3) * 4]).toBe(0);
  });
});

describe("renderHeat", () => {
  it("renders values as 8-bit grayscale", () => {
    const px = renderHeat(
      [
        [1.0, 0.0],
        [0.5, 0.25],
      ],
      2,
      2,
    );
    expect(px.rgba[0]).toBe(255);
    expect(px.rgba[4]).toBe(0);
    expect(px.rgba[8]).toBe(128);
    expect(px.rgba[12]).toBe(64);
  });
});

describe("montage", () => {
  function tile(label: string, level: number) {
    const px = makePixels(4, 4);
    px.rgba.fill(level);
    return { label, pixels: px };
  }

  it("lays tiles out horizontally under a label bar", () => {
    const { pixels, slots } = montage([tile("a", 10), tile("b", 20)]);
    expect(pixels.width).toBe(8);
    expect(pixels.height).toBe(4 + 14);
    expect(slots.map((s) => s.label)).toEqual(["a", "b"]);
    // first row of tile content sits below the label bar
    expect(pixels.rgba[(14 * 8 + 0) * 4]).toBe(10);
    expect(pixels.rgba[(14 * 8 + 4) * 4]).toBe(20);
    // label bar stays white
    expect(pixels.rgba[0]).toBe(255);
  });

  it("rejects mismatched tile sizes and empty input", () => {
    const odd = { label: "c", pixels: makePixels(2, 2) };
    expect(() => montage([tile("a", 0), odd])).toThrow(/share one size/);
    expect(() => montage([])).toThrow(/at least one/);
  });
});
