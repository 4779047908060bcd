/** Pure raster math: thresholding, overlay blending, montage layout.
 *
 * Everything here operates on plain RGBA buffers so it runs identically
 * in the browser and under node-based tests. The continuous heatmap
 * values always come from the server; this file only re-renders them.
 */

export interface Pixels {
  width: number;
  height: number;
  rgba: Uint8ClampedArray; // length = width * height * 4
}

export function makePixels(width: number, height: number): Pixels {
  return { width, height, rgba: new Uint8ClampedArray(width * height * 4) };
}

/** Strictly-greater thresholding, matching the engine's convention. */
export function binarize(values: number[][], threshold: number): boolean[][] {
  return values.map((row) => row.map((v) => v > threshold));
}

/** Heatmap value at an output pixel, nearest-neighbor scaled. */
function sample(values: number[][], x: number, y: number, w: number, h: number): number {
  const rows = values.length;
  const cols = values[0].length;
  const r = Math.min(rows - 1, Math.floor((y * rows) / h));
  const c = Math.min(cols - 1, Math.floor((x * cols) / w));
  return values[r][c];
}

export interface OverlayOptions {
  alpha: number; // peak blend weight, [0, 1]
  threshold: number; // [0, 1]
  binarized: boolean; // true: hard mask at alpha; false: weight alpha * value
}

/** Red-tint alpha blend of heatmap values over a base image.
 *
 * With `binarized` the weight is alpha where value > threshold and 0
 * elsewhere; otherwise it fades with the continuous value. The slider
 * re-renders through this function without any server round-trip.
 */
export function renderOverlay(
  base: Pixels,
  values: number[][],
  opts: OverlayOptions,
): Pixels {
  const { width, height } = base;
  const out = makePixels(width, height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const v = sample(values, x, y, width, height);
      const w = opts.binarized
        ? v > opts.threshold
          ? opts.alpha
          : 0
        : opts.alpha * v;
      const i = (y * width + x) * 4;
      out.rgba[i] = base.rgba[i] * (1 - w) + 255 * w;
      out.rgba[i + 1] = base.rgba[i + 1] * (1 - w);
      out.rgba[i + 2] = base.rgba[i + 2] * (1 - w);
      out.rgba[i + 3] = 255;
    }
  }
  return out;
}

/** Grayscale rendering of raw heatmap values (used for method tiles). */
export function renderHeat(values: number[][], width: number, height: number): Pixels {
  const out = makePixels(width, height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const g = Math.round(255 * sample(values, x, y, width, height));
      const i = (y * width + x) * 4;
      out.rgba[i] = g;
      out.rgba[i + 1] = g;
      out.rgba[i + 2] = g;
      out.rgba[i + 3] = 255;
    }
  }
  return out;
}

export interface MontageTile {
  label: string;
  pixels: Pixels;
}

const LABEL_BAR = 14; // px reserved above each tile; labels drawn by caller

/** Horizontal strip of equally sized tiles with a label bar on top.
 *
 * Returns the composed buffer plus where each tile and label landed so
 * the caller (canvas text) and tests agree on the geometry.
 */
export function montage(tiles: MontageTile[]): {
  pixels: Pixels;
  slots: { label: string; x: number; y: number }[];
} {
  if (tiles.length === 0) throw new Error("montage needs at least one tile");
  const tw = tiles[0].pixels.width;
  const th = tiles[0].pixels.height;
  for (const t of tiles) {
    if (t.pixels.width !== tw || t.pixels.height !== th) {
      throw new Error("montage tiles must share one size");
    }
  }
  const out = makePixels(tw * tiles.length, th + LABEL_BAR);
  out.rgba.fill(255);
  const slots = tiles.map((tile, idx) => {
    const ox = idx * tw;
    for (let y = 0; y < th; y++) {
      const src = tile.pixels.rgba.subarray(y * tw * 4, (y + 1) * tw * 4);
      out.rgba.set(src, ((y + LABEL_BAR) * out.width + ox) * 4);
    }
    return { label: tile.label, x: ox + 2, y: LABEL_BAR - 3 };
  });
  return { pixels: out, slots };
}
