/** Browser glue with test seams.
 *
 * Canvas 2D, image decoding and file downloads are the only parts of
 * the UI that need a real browser; each goes through a replaceable
 * function so the test suite can run under a DOM shim without a canvas
 * implementation.
 */

import type { Pixels } from "./pixels.js";

export type Context2DLike = {
  putImageData(data: ImageData, dx: number, dy: number): void;
  fillText(text: string, x: number, y: number): void;
  font: string;
  fillStyle: string | CanvasGradient | CanvasPattern;
};

let contextFactory: (canvas: HTMLCanvasElement) => Context2DLike | null = (
  canvas,
) => canvas.getContext("2d");

export function setContext2DFactory(
  fn: (canvas: HTMLCanvasElement) => Context2DLike | null,
): void {
  contextFactory = fn;
}

export function toImageData(px: Pixels): ImageData {
  if (typeof ImageData !== "undefined") {
    // fresh copy: ImageData insists on a plain-ArrayBuffer-backed array
    return new ImageData(new Uint8ClampedArray(px.rgba), px.width, px.height);
  }
  // DOM shims without a canvas: a structural stand-in is enough for fakes
  return {
    width: px.width,
    height: px.height,
    data: px.rgba,
    colorSpace: "srgb",
  } as unknown as ImageData;
}

/** Draw a pixel buffer onto a canvas, resizing the canvas to fit. */
export function paint(
  canvas: HTMLCanvasElement,
  px: Pixels,
  labels?: { label: string; x: number; y: number }[],
): void {
  canvas.width = px.width;
  canvas.height = px.height;
  const ctx = contextFactory(canvas);
  if (!ctx) return;
  ctx.putImageData(toImageData(px), 0, 0);
  if (labels) {
    ctx.font = "10px sans-serif";
    ctx.fillStyle = "#000";
    for (const l of labels) ctx.fillText(l.label, l.x, l.y);
  }
}

export interface DecodedFile {
  name: string;
  base64: string;
  pixels: Pixels;
}

async function browserDecode(file: File): Promise<DecodedFile> {
  const buf = await file.arrayBuffer();
  const bytes = new Uint8Array(buf);
  let bin = "";
  for (const b of bytes) bin += String.fromCharCode(b);
  const base64 = btoa(bin);

  const bitmap = await createImageBitmap(new Blob([buf]));
  const canvas = document.createElement("canvas");
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d unavailable");
  ctx.drawImage(bitmap, 0, 0);
  const data = ctx.getImageData(0, 0, bitmap.width, bitmap.height);
  return {
    name: file.name,
    base64,
    pixels: {
      width: data.width,
      height: data.height,
      rgba: new Uint8ClampedArray(data.data),
    },
  };
}

let imageDecoder: (file: File) => Promise<DecodedFile> = browserDecode;

export function setImageDecoder(fn: (file: File) => Promise<DecodedFile>): void {
  imageDecoder = fn;
}

export function decodeImageFile(file: File): Promise<DecodedFile> {
  return imageDecoder(file);
}

function browserDownload(px: Pixels, filename: string): void {
  const canvas = document.createElement("canvas");
  paint(canvas, px);
  canvas.toBlob((blob) => {
    if (!blob) return;
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = filename;
    a.click();
    URL.revokeObjectURL(a.href);
  }, "image/png");
}

let pngDownloader: (px: Pixels, filename: string) => void = browserDownload;

export function setPngDownloader(
  fn: (px: Pixels, filename: string) => void,
): void {
  pngDownloader = fn;
}

export function downloadPng(px: Pixels, filename: string): void {
  pngDownloader(px, filename);
}
