/** DOM wiring: builds the explorer UI inside a host element.
 *
 * All view updates flow one way: control events mutate the session
 * controller, and a single render() repaints from its state. The app
 * holds no numeric state of its own beyond what the server returned.
 */

import { ApiClient } from "./api.js";
import { decodeImageFile, downloadPng, paint } from "./dom.js";
import { montage, renderHeat, renderOverlay, type MontageTile } from "./pixels.js";
import { SessionController } from "./session.js";
import type { Method, Query } from "./types.js";
import { METHODS } from "./types.js";

export interface App {
  controller: SessionController;
  root: HTMLElement;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

/** "cat" -> label, "#2" -> class index, "emb:name" -> stored embedding. */
export function parseQueryText(text: string): Query | null {
  const t = text.trim();
  if (!t) return null;
  const idx = t.match(/^#(\d+)$/);
  if (idx) return { class_index: parseInt(idx[1], 10) };
  if (t.startsWith("emb:")) return { embedding_name: t.slice(4) };
  return { label: t };
}

const OVERLAY_ALPHA = 0.6;

export function buildApp(root: HTMLElement, client: ApiClient): App {
  const controller = new SessionController(client);

  // ---- controls ----------------------------------------------------
  const modelSel = el("select", { id: "model" });
  const fileInput = el("input", { id: "file", type: "file", accept: "image/*" });
  const queryInput = el("input", {
    id: "query",
    list: "vocab",
    placeholder: "label, #index, or emb:name",
  });
  const vocabList = el("datalist", { id: "vocab" });
  const methodSel = el("select", { id: "method" });
  for (const m of METHODS) methodSel.appendChild(el("option", { value: m }, m));
  const rangeInput = el("input", { id: "range", value: "default" });
  const applyBtn = el("button", { id: "apply-range" }, "apply range");
  const thresholdInput = el("input", {
    id: "threshold",
    type: "range",
    min: "0",
    max: "1",
    step: "0.01",
    value: "0.5",
  });
  const binarizeBox = el("input", { id: "binarize", type: "checkbox" });
  const suppressBox = el("input", { id: "suppress", type: "checkbox" });
  const explainBtn = el("button", { id: "explain" }, "explain");
  const perturbBtn = el("button", { id: "perturb" }, "perturbation curve");
  const compareBtn = el("button", { id: "compare" }, "compare methods");
  const exportBtn = el("button", { id: "export" }, "export montage");

  // ---- result panes ------------------------------------------------
  const status = el("div", { id: "status" });
  const errorLine = el("div", { id: "error", class: "error" });
  const overlay = el("canvas", { id: "overlay" });
  const stripTitle = el("div", { id: "strip-title" });
  const strip = el("div", { id: "strip" });
  const curve = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  curve.setAttribute("id", "curve");
  curve.setAttribute("viewBox", "0 0 220 110");
  const grid = el("div", { id: "grid" });

  const controls = el("div", { class: "controls" });
  const lab = (text: string, node: HTMLElement) => {
    const wrap = el("label", {}, text + " ");
    wrap.appendChild(node);
    controls.appendChild(wrap);
  };
  lab("model", modelSel);
  lab("image", fileInput);
  lab("query", queryInput);
  controls.appendChild(vocabList);
  lab("method", methodSel);
  lab("layers", rangeInput);
  controls.appendChild(applyBtn);
  lab("threshold", thresholdInput);
  lab("binarize", binarizeBox);
  lab("suppress background", suppressBox);
  controls.appendChild(explainBtn);
  controls.appendChild(perturbBtn);
  controls.appendChild(compareBtn);
  controls.appendChild(exportBtn);

  root.appendChild(controls);
  root.appendChild(status);
  root.appendChild(errorLine);
  root.appendChild(overlay);
  root.appendChild(stripTitle);
  root.appendChild(strip);
  root.appendChild(curve);
  root.appendChild(grid);

  // ---- events ------------------------------------------------------
  modelSel.addEventListener("change", () => {
    controller.setModel(modelSel.value);
    void refreshVocab();
  });

  async function refreshVocab(): Promise<void> {
    vocabList.textContent = "";
    if (!controller.state.modelId) return;
    try {
      const vocab = await client.vocab(controller.state.modelId);
      for (const label of vocab.labels) {
        vocabList.appendChild(el("option", { value: label }));
      }
    } catch {
      // vocab is a convenience; queries still work without it
    }
  }

  fileInput.addEventListener("change", () => {
    const file = fileInput.files?.[0];
    if (file) void handleFile(file);
  });

  async function handleFile(file: File): Promise<void> {
    const decoded = await decodeImageFile(file);
    controller.setImage(decoded);
    if (controller.state.query && controller.state.modelId) {
      await controller.explain();
    }
  }

  queryInput.addEventListener("change", () => {
    const q = parseQueryText(queryInput.value);
    if (q) controller.setQuery(q);
  });

  methodSel.addEventListener("change", () => {
    void controller.setMethod(methodSel.value as Method);
  });

  rangeInput.addEventListener("input", () => {
    controller.setRangeText(rangeInput.value);
  });
  applyBtn.addEventListener("click", () => {
    void controller.applyRange(rangeInput.value);
  });

  thresholdInput.addEventListener("input", () => {
    controller.setThreshold(parseFloat(thresholdInput.value));
  });
  binarizeBox.addEventListener("change", () => {
    controller.setBinarized(binarizeBox.checked);
  });
  suppressBox.addEventListener("change", () => {
    controller.setSuppressBackground(suppressBox.checked);
  });

  explainBtn.addEventListener("click", () => void controller.explain());
  perturbBtn.addEventListener("click", () => void controller.perturb());
  compareBtn.addEventListener("click", () => void controller.compareMethods());
  exportBtn.addEventListener("click", () => exportMontage());

  function exportMontage(): void {
    const tiles = controller.state.compare;
    if (!tiles) return;
    const good: MontageTile[] = tiles
      .filter((t) => t.response)
      .map((t) => ({
        label: t.method,
        pixels: renderHeat(t.response!.values, t.response!.W, t.response!.H),
      }));
    if (good.length === 0) return;
    const { pixels, slots } = montage(good);
    // labels are baked by the canvas downloader; slots carry positions
    void slots;
    downloadPng(pixels, "methods.png");
  }

  // ---- rendering ---------------------------------------------------
  function render(): void {
    const s = controller.state;

    if (modelSel.options.length !== s.models.length) {
      modelSel.textContent = "";
      for (const m of s.models) {
        const opt = el("option", { value: m.id },
                       m.status === "ok" ? m.id : `${m.id} (invalid)`);
        if (m.status !== "ok") opt.disabled = true;
        modelSel.appendChild(opt);
      }
      if (s.modelId) modelSel.value = s.modelId;
    }

    rangeInput.classList.toggle("invalid", !s.rangeValid);
    applyBtn.disabled = !s.rangeValid;
    const ready = Boolean(s.modelId && s.image && s.query && s.rangeValid);
    explainBtn.disabled = !ready;
    perturbBtn.disabled = !ready;
    compareBtn.disabled = !ready;
    exportBtn.disabled = !s.compare?.some((t) => t.response);

    errorLine.textContent = s.error ?? "";

    if (s.lastExplain) {
      const r = s.lastExplain;
      status.textContent =
        `${r.method} on ${r.model_id}, layers [${r.layer_range.join(", ")}], ` +
        `score ${r.score.toFixed(4)}, payload ${s.payloadHash}` +
        (s.pending ? " (updating)" : "");
    } else {
      status.textContent = s.pending ? "running" : "upload an image to start";
    }

    if (s.image && s.lastExplain) {
      const px = renderOverlay(s.image.pixels, s.lastExplain.values, {
        alpha: OVERLAY_ALPHA,
        threshold: s.threshold,
        binarized: s.binarized,
      });
      paint(overlay, px);
    }

    renderStrip();
    renderCurve();
    renderGrid();
  }

  function renderStrip(): void {
    strip.textContent = "";
    const r = controller.state.lastExplain;
    if (!r || r.layer_summaries.length === 0) {
      stripTitle.textContent = "";
      return;
    }
    stripTitle.textContent =
      r.layer_range.length === 1
        ? `layer ${r.layer_range[0]} (single)`
        : `layers ${r.layer_range.join(", ")}`;
    for (const summary of r.layer_summaries) {
      strip.appendChild(
        el(
          "span",
          { class: "cell", "data-layer": String(summary.layer) },
          `L${summary.layer} score ${summary.score.toFixed(3)} ` +
            `max ${summary.max.toFixed(3)} mean ${summary.mean.toFixed(3)}`,
        ),
      );
    }
  }

  function renderCurve(): void {
    curve.textContent = "";
    const c = controller.state.lastCurve;
    if (!c) return;
    const pts = c.fractions
      .map((f, i) => `${10 + f * 200},${100 - c.accuracies[i] * 90}`)
      .join(" ");
    const line = document.createElementNS(
      "http://www.w3.org/2000/svg",
      "polyline",
    );
    line.setAttribute("points", pts);
    line.setAttribute("fill", "none");
    line.setAttribute("stroke", "#c00");
    curve.appendChild(line);
    const text = document.createElementNS("http://www.w3.org/2000/svg", "text");
    text.setAttribute("x", "12");
    text.setAttribute("y", "12");
    text.textContent = `${c.mode} auc ${c.auc.toFixed(3)}`;
    curve.appendChild(text);
  }

  function renderGrid(): void {
    grid.textContent = "";
    const tiles = controller.state.compare;
    if (!tiles) return;
    for (const tile of tiles) {
      const cell = el("div", { class: "tile", "data-method": tile.method });
      cell.appendChild(el("div", { class: "tile-label" }, tile.method));
      if (tile.response) {
        const canvas = el("canvas", { class: "tile-heat" });
        paint(canvas, renderHeat(tile.response.values, tile.response.W, tile.response.H));
        cell.appendChild(canvas);
      } else {
        cell.appendChild(el("div", { class: "tile-error" }, tile.error ?? "failed"));
      }
      grid.appendChild(cell);
    }
  }

  controller.onChange(render);
  render();
  return { controller, root };
}
