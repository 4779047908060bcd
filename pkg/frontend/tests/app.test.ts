// @vitest-environment happy-dom
/** DOM smoke tests against recorded server payloads.
 *
 * Canvas 2D, image decoding and downloads go through the test seams in
 * src/dom.ts, so these run under a DOM shim with no real canvas. The
 * response bytes are the engine server's own golden fixtures.
 */

import { beforeEach, describe, expect, it } from "vitest";
import { ApiClient } from "../src/api.js";
import { buildApp, parseQueryText, type App } from "../src/app.js";
import {
  setContext2DFactory,
  setImageDecoder,
  setPngDownloader,
  type Context2DLike,
} from "../src/dom.js";
import type { Pixels } from "../src/pixels.js";
import { fakeServer, flushAsync, grayImage, type FakeServer } from "./helpers.js";

interface FakeCtx extends Context2DLike {
  images: ImageData[];
  labels: string[];
}

const ctxByCanvas = new Map<HTMLCanvasElement, FakeCtx>();

function fakeCtxFactory(canvas: HTMLCanvasElement): FakeCtx {
  let ctx = ctxByCanvas.get(canvas);
  if (!ctx) {
    ctx = {
      images: [],
      labels: [],
      font: "",
      fillStyle: "",
      putImageData(data: ImageData) {
        this.images.push(data);
      },
      fillText(text: string) {
        this.labels.push(text);
      },
    };
    ctxByCanvas.set(canvas, ctx);
  }
  return ctx;
}

const downloads: { px: Pixels; filename: string }[] = [];

function attachFile(input: HTMLInputElement, file: File): void {
  Object.defineProperty(input, "files", { value: [file], configurable: true });
}

async function uploadSample(app: App): Promise<void> {
  const query = app.root.querySelector("#query") as HTMLInputElement;
  query.value = "class_0";
  query.dispatchEvent(new Event("change"));

  const fileInput = app.root.querySelector("#file") as HTMLInputElement;
  attachFile(fileInput, new File([new Uint8Array([1])], "sample.png"));
  fileInput.dispatchEvent(new Event("change"));
  await flushAsync(20);
}

describe("explorer UI", () => {
  let server: FakeServer;
  let app: App;

  beforeEach(async () => {
    ctxByCanvas.clear();
    downloads.length = 0;
    setContext2DFactory(fakeCtxFactory);
    setImageDecoder(async (file) => ({
      name: file.name,
      base64: "aGk=",
      pixels: grayImage(16, 16, 100),
    }));
    setPngDownloader((px, filename) => downloads.push({ px, filename }));

    server = fakeServer();
    const host = document.createElement("div");
    document.body.appendChild(host);
    app = buildApp(host, new ApiClient("", server.fetch));
    await app.controller.loadModels();
  });

  it("boots with the model list and a disabled explain button", () => {
    const sel = app.root.querySelector("#model") as HTMLSelectElement;
    expect(sel.options.length).toBe(3);
    expect(sel.value).toBe("tiny_cls");
    const explain = app.root.querySelector("#explain") as HTMLButtonElement;
    expect(explain.disabled).toBe(true); // no image or query yet
  });

  it("upload then explain renders a non-empty overlay", async () => {
    await uploadSample(app);

    expect(server.calls.filter((c) => c.url.endsWith("/v1/explain"))).toHaveLength(1);
    const overlay = app.root.querySelector("#overlay") as HTMLCanvasElement;
    const ctx = ctxByCanvas.get(overlay);
    expect(ctx, "overlay canvas was painted").toBeDefined();
    const painted = ctx!.images.at(-1)!;
    expect(painted.width).toBe(16);
    // non-empty: blended pixels differ from the flat gray source
    const base = grayImage(16, 16, 100).rgba;
    let changed = 0;
    for (let i = 0; i < painted.data.length; i++) {
      if (painted.data[i] !== base[i]) changed++;
    }
    expect(changed).toBeGreaterThan(0);

    const status = app.root.querySelector("#status")!.textContent!;
    expect(status).toContain("legrad on tiny_cls");
    expect(status).toMatch(/payload [0-9a-f]{16}/);
  });

  it("layer-range change issues a new request and moves the payload hash", async () => {
    await uploadSample(app);
    const hashBefore = app.controller.state.payloadHash;

    const range = app.root.querySelector("#range") as HTMLInputElement;
    range.value = "3";
    range.dispatchEvent(new Event("input"));
    (app.root.querySelector("#apply-range") as HTMLButtonElement).click();
    await flushAsync(20);

    const explains = server.calls.filter((c) => c.url.endsWith("/v1/explain"));
    expect(explains).toHaveLength(2);
    expect(explains[1].body!.layer_range).toEqual([3]);
    expect(app.controller.state.payloadHash).not.toBe(hashBefore);
    expect(app.root.querySelector("#status")!.textContent).toContain(
      app.controller.state.payloadHash!,
    );
  });

  it("a single-layer selection labels the summary strip", async () => {
    await uploadSample(app);
    expect(app.root.querySelector("#strip-title")!.textContent).toBe(
      "layers 2, 3",
    );
    expect(app.root.querySelectorAll("#strip .cell")).toHaveLength(2);

    await app.controller.applyRange("3");
    expect(app.root.querySelector("#strip-title")!.textContent).toBe(
      "layer 3 (single)",
    );
    const cells = app.root.querySelectorAll("#strip .cell");
    expect(cells).toHaveLength(1);
    expect(cells[0].getAttribute("data-layer")).toBe("3");
  });

  it("an invalid range disables apply and never fetches", async () => {
    await uploadSample(app);
    const calls = server.calls.length;

    const range = app.root.querySelector("#range") as HTMLInputElement;
    const apply = app.root.querySelector("#apply-range") as HTMLButtonElement;
    range.value = "0";
    range.dispatchEvent(new Event("input"));
    expect(apply.disabled).toBe(true);
    expect(range.classList.contains("invalid")).toBe(true);

    apply.click();
    await flushAsync();
    expect(server.calls.length).toBe(calls);

    range.value = "2-3";
    range.dispatchEvent(new Event("input"));
    expect(apply.disabled).toBe(false);
    expect(range.classList.contains("invalid")).toBe(false);
  });

  it("threshold slider re-binarizes without a server round-trip", async () => {
    await uploadSample(app);
    const overlay = app.root.querySelector("#overlay") as HTMLCanvasElement;
    const ctx = ctxByCanvas.get(overlay)!;
    const paints = ctx.images.length;
    const calls = server.calls.length;

    const slider = app.root.querySelector("#threshold") as HTMLInputElement;
    slider.value = "0.9";
    slider.dispatchEvent(new Event("input"));

    expect(server.calls.length).toBe(calls); // no network traffic
    expect(ctx.images.length).toBeGreaterThan(paints); // but a repaint
  });

  it("method comparison shows one tile per method with inline errors", async () => {
    server.failMethods.set("gradcam", "inference failed: synthetic");
    await uploadSample(app);

    (app.root.querySelector("#compare") as HTMLButtonElement).click();
    await flushAsync(40);

    const tiles = [...app.root.querySelectorAll("#grid .tile")];
    expect(tiles.map((t) => t.getAttribute("data-method"))).toEqual([
      "legrad",
      "raw_attention",
      "rollout",
      "gradcam",
      "attentioncam",
    ]);
    expect(app.root.querySelectorAll("#grid .tile-heat")).toHaveLength(4);
    const errTile = tiles[3].querySelector(".tile-error")!;
    expect(errTile.textContent).toBe("inference failed: synthetic");
  });

  it("export downloads a montage of the successful tiles", async () => {
    server.failMethods.set("gradcam", "inference failed: synthetic");
    await uploadSample(app);
    const exportBtn = app.root.querySelector("#export") as HTMLButtonElement;
    expect(exportBtn.disabled).toBe(true); // nothing to export yet

    (app.root.querySelector("#compare") as HTMLButtonElement).click();
    await flushAsync(40);
    expect(exportBtn.disabled).toBe(false);

    exportBtn.click();
    expect(downloads).toHaveLength(1);
    expect(downloads[0].filename).toBe("methods.png");
    // 4 successful 16x16 tiles side by side, plus the label bar
    expect(downloads[0].px.width).toBe(4 * 16);
    expect(downloads[0].px.height).toBe(16 + 14);
  });

  it("perturbation curve renders as a 10-point polyline", async () => {
    await uploadSample(app);
    (app.root.querySelector("#perturb") as HTMLButtonElement).click();
    await flushAsync(20);

    const line = app.root.querySelector("#curve polyline")!;
    expect(line.getAttribute("points")!.split(" ")).toHaveLength(10);
    expect(app.root.querySelector("#curve text")!.textContent).toContain("auc");
  });

  it("query text parses labels, indices and embedding names", () => {
    expect(parseQueryText("cat")).toEqual({ label: "cat" });
    expect(parseQueryText("#2")).toEqual({ class_index: 2 });
    expect(parseQueryText("emb:empty_prompt")).toEqual({
      embedding_name: "empty_prompt",
    });
    expect(parseQueryText("   ")).toBeNull();
  });
});
