import { describe, expect, it } from "vitest";
import { ApiClient } from "../src/api.js";
import { parseLayerRange, SessionController } from "../src/session.js";
import type { FetchLike } from "../src/api.js";
import { fakeServer, flushAsync, grayImage, RAW } from "./helpers.js";

describe("parseLayerRange", () => {
  it("maps the documented spellings", () => {
    expect(parseLayerRange("default", 3)).toBeNull();
    expect(parseLayerRange("", 3)).toBeNull();
    expect(parseLayerRange("all", 3)).toEqual([1, 2, 3]);
    expect(parseLayerRange("3", 3)).toEqual([3]);
    expect(parseLayerRange("2-3", 3)).toEqual([2, 3]);
    expect(parseLayerRange("1,3", 3)).toEqual([1, 3]);
    expect(parseLayerRange("3,1,3", 3)).toEqual([1, 3]);
  });

  it("rejects malformed or out-of-depth specs", () => {
    expect(parseLayerRange("0", 3)).toBeUndefined();
    expect(parseLayerRange("4", 3)).toBeUndefined();
    expect(parseLayerRange("3-2", 3)).toBeUndefined();
    expect(parseLayerRange("x", 3)).toBeUndefined();
    expect(parseLayerRange("1..2", 3)).toBeUndefined();
  });
});

async function readySession(fetchFn?: FetchLike) {
  const server = fakeServer();
  const controller = new SessionController(
    new ApiClient("", fetchFn ?? server.fetch),
  );
  await controller.loadModels();
  controller.setImage({ name: "t.png", base64: "aGk=", pixels: grayImage() });
  controller.setQuery({ label: "class_0" });
  return { server, controller };
}

describe("SessionController", () => {
  it("selects the first loadable model after loadModels", async () => {
    const { controller } = await readySession();
    expect(controller.state.modelId).toBe("tiny_cls");
    expect(controller.state.models).toHaveLength(3);
  });

  it("explain stores the response and its payload hash", async () => {
    const { server, controller } = await readySession();
    await controller.explain();
    expect(controller.requestCount).toBe(1);
    expect(controller.state.lastExplain?.layer_range).toEqual([2, 3]);
    expect(controller.state.payloadHash).toMatch(/^[0-9a-f]{16}$/);
    expect(controller.state.pending).toBe(false);
    const body = server.calls.at(-1)!.body!;
    expect(body.model_id).toBe("tiny_cls");
    expect(body.layer_range).toBeUndefined(); // server default
  });

  it("a layer-range change issues a new request and the hash moves", async () => {
    const { server, controller } = await readySession();
    await controller.explain();
    const before = controller.state.payloadHash;
    await controller.applyRange("3");
    expect(controller.requestCount).toBe(2);
    expect(server.calls.at(-1)!.body!.layer_range).toEqual([3]);
    expect(controller.state.lastExplain?.layer_range).toEqual([3]);
    expect(controller.state.payloadHash).not.toBe(before);
  });

  it("an invalid range never reaches the network", async () => {
    const { server, controller } = await readySession();
    const calls = server.calls.length;
    await controller.applyRange("0");
    expect(controller.state.rangeValid).toBe(false);
    expect(server.calls.length).toBe(calls);
  });

  it("threshold movement is client-side only", async () => {
    const { server, controller } = await readySession();
    await controller.explain();
    const calls = server.calls.length;
    controller.setThreshold(0.9);
    controller.setThreshold(0.1);
    expect(server.calls.length).toBe(calls);
    expect(controller.state.threshold).toBe(0.1);
    expect(() => controller.setThreshold(1.5)).toThrow(/\[0, 1\]/);
  });

  it("method switch triggers a fresh request", async () => {
    const { server, controller } = await readySession();
    await controller.explain();
    await controller.setMethod("rollout");
    expect(controller.requestCount).toBe(2);
    expect(server.calls.at(-1)!.body!.method).toBe("rollout");
  });

  it("suppression flag rides along in the request body", async () => {
    const { server, controller } = await readySession();
    controller.setSuppressBackground(true);
    await controller.explain();
    expect(server.calls.at(-1)!.body!.suppress_background).toBe(true);
  });

  it("a stale response never overwrites a newer one", async () => {
    // hand-rolled fetch: first explain resolves only after the second
    let release: (() => void) | null = null;
    const gate = new Promise<void>((r) => (release = r));
    let n = 0;
    const fetchFn: FetchLike = async (url) => {
      if (url.endsWith("/v1/models")) {
        return new Response(RAW.models, { status: 200 });
      }
      n++;
      if (n === 1) {
        await gate; // slow first request
        return new Response(RAW.explainLastLayer, { status: 200 });
      }
      return new Response(RAW.explainDefault, { status: 200 });
    };

    const { controller } = await readySession(fetchFn);
    const first = controller.explain(); // stalls on the gate
    const second = controller.explain();
    await second;
    const settled = controller.state.payloadHash;
    expect(controller.state.lastExplain?.layer_range).toEqual([2, 3]);

    release!();
    await first;
    await flushAsync();
    // the late arrival (single-layer payload) was discarded
    expect(controller.state.payloadHash).toBe(settled);
    expect(controller.state.lastExplain?.layer_range).toEqual([2, 3]);
  });

  it("comparison runs every method, one request at a time", async () => {
    const { server, controller } = await readySession();
    server.failMethods.set("gradcam", "inference failed: synthetic");
    await controller.compareMethods();
    const tiles = controller.state.compare!;
    expect(tiles.map((t) => t.method)).toEqual([
      "legrad",
      "raw_attention",
      "rollout",
      "gradcam",
      "attentioncam",
    ]);
    expect(tiles.filter((t) => t.response)).toHaveLength(4);
    expect(tiles[3].error).toBe("inference failed: synthetic");
    expect(server.maxInFlight).toBe(1);
  });

  it("perturb stores the curve", async () => {
    const { controller } = await readySession();
    await controller.perturb("positive");
    expect(controller.state.lastCurve?.accuracies).toHaveLength(10);
    expect(controller.state.lastCurve?.mode).toBe("positive");
  });

  it("api errors land in state.error, not exceptions", async () => {
    const { server, controller } = await readySession();
    server.failMethods.set("legrad", "inference failed: synthetic");
    await controller.explain();
    expect(controller.state.error).toBe("inference failed: synthetic");
    expect(controller.state.pending).toBe(false);
  });
});
