/** Shared scaffolding: recorded server payloads and a scripted fetch.
 *
 * The explain/perturb/models payloads are the exact bytes the engine's
 * HTTP server produced on the checked-in fixture models (committed
 * under fixtures/golden with checksums), so these tests exercise the
 * client against real wire data without a server.
 */

import { readFileSync } from "node:fs";
import { resolve } from "node:path";
import type { FetchLike } from "../src/api.js";
import { makePixels, type Pixels } from "../src/pixels.js";

// vitest runs with cwd = frontend/, and the DOM environment mangles
// import.meta.url, so resolve the repo-level fixtures from cwd
function golden(name: string): string {
  return readFileSync(
    resolve(process.cwd(), "..", "fixtures", "golden", name),
    "utf-8",
  );
}

export const RAW = {
  models: golden("models.json"),
  explainDefault: golden("explain_default.json"),
  explainLastLayer: golden("explain_lastlayer.json"),
  perturb: golden("perturb.json"),
};

export interface RecordedCall {
  url: string;
  init?: RequestInit;
  body?: Record<string, unknown>;
}

export interface FakeServer {
  fetch: FetchLike;
  calls: RecordedCall[];
  /** highest number of simultaneously unresolved requests seen */
  maxInFlight: number;
  /** method name -> error payload; that method 500s instead */
  failMethods: Map<string, string>;
}

function json(raw: string, status = 200): Response {
  return new Response(raw, {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

/** Scripted server: routes by URL, picks the explain payload by the
 * requested layer_range (the real server behaves the same way on the
 * fixture model). */
export function fakeServer(): FakeServer {
  const calls: RecordedCall[] = [];
  const failMethods = new Map<string, string>();
  let inFlight = 0;
  const server: FakeServer = {
    calls,
    maxInFlight: 0,
    failMethods,
    fetch: async (url, init) => {
      const body = init?.body
        ? (JSON.parse(init.body as string) as Record<string, unknown>)
        : undefined;
      calls.push({ url, init, body });
      inFlight++;
      server.maxInFlight = Math.max(server.maxInFlight, inFlight);
      await Promise.resolve(); // yield, as a network hop would
      inFlight--;

      if (url.endsWith("/v1/models")) return json(RAW.models);
      if (url.includes("/vocab")) {
        return json(
          JSON.stringify({
            kind: "learned_head",
            labels: ["class_0", "class_1", "class_2"],
            embeddings: ["empty_prompt"],
          }),
        );
      }
      if (url.endsWith("/v1/perturb")) return json(RAW.perturb);
      if (url.endsWith("/v1/explain")) {
        const method = (body?.method as string) ?? "legrad";
        const fail = failMethods.get(method);
        if (fail !== undefined) {
          return json(JSON.stringify({ error: fail }), 500);
        }
        const range = body?.layer_range as number[] | undefined;
        const single = Array.isArray(range) && range.length === 1 && range[0] === 3;
        return json(single ? RAW.explainLastLayer : RAW.explainDefault);
      }
      return json(JSON.stringify({ error: `no route ${url}` }), 404);
    },
  };
  return server;
}

/** Flat mid-gray test image. */
export function grayImage(width = 16, height = 16, level = 100): Pixels {
  const px = makePixels(width, height);
  for (let i = 0; i < px.rgba.length; i += 4) {
    px.rgba[i] = level;
    px.rgba[i + 1] = level;
    px.rgba[i + 2] = level;
    px.rgba[i + 3] = 255;
  }
  return px;
}

export function flushAsync(rounds = 10): Promise<void> {
  let p = Promise.resolve();
  for (let i = 0; i < rounds; i++) p = p.then(() => undefined);
  return p;
}
