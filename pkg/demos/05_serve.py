"""The HTTP API, exercised in process.

Mounts the service on the checked-in fixture models and walks the
endpoints with an in-process test client, so nothing binds a port. The
equivalent curl invocations (against a real `legrad serve --model-dir
fixtures/models`) are printed alongside.

Run:  python3 demos/05_serve.py
"""

import base64
import json
from pathlib import Path

from fastapi.testclient import TestClient

from legrad import server

ROOT = Path(__file__).resolve().parents[1]


def pretty(obj, drop=("values", "patch_grid", "png_base64")) -> str:
    """Response JSON with the bulky array fields summarized."""
    if isinstance(obj, dict):
        slim = {}
        for k, v in obj.items():
            if k in drop and isinstance(v, (list, str)):
                slim[k] = f"<{len(v)} {'rows' if isinstance(v, list) else 'chars'}>"
            else:
                slim[k] = v
        obj = slim
    return json.dumps(obj, indent=2, sort_keys=True)


def main() -> None:
    app = server.create_app(model_dir=str(ROOT / "fixtures" / "models"))
    client = TestClient(app)
    image_b64 = base64.b64encode(
        (ROOT / "fixtures" / "images" / "sample.png").read_bytes()).decode()

    print("GET /v1/models")
    print("  curl http://localhost:8080/v1/models")
    models = client.get("/v1/models").json()
    for entry in models:
        print(f"  {pretty(entry)}")

    print("\nGET /v1/models/tiny_text/vocab")
    print(pretty(client.get("/v1/models/tiny_text/vocab").json()))

    print("\nPOST /v1/explain (default layer range)")
    print('  curl -X POST http://localhost:8080/v1/explain -H '
          '"Content-Type: application/json" -d \'{"model_id": "tiny_cls", '
          '"image": "<base64 png>", "query": {"label": "class_0"}}\'')
    resp = client.post("/v1/explain", json={
        "model_id": "tiny_cls",
        "image": image_b64,
        "query": {"label": "class_0"},
    })
    print(f"  status {resp.status_code}")
    print(pretty(resp.json()))

    print("\nPOST /v1/explain (single layer, timing opted in)")
    resp = client.post("/v1/explain", json={
        "model_id": "tiny_cls",
        "image": image_b64,
        "query": {"class_index": 0},
        "layer_range": [3],
        "include_timing": True,
    })
    body = resp.json()
    print(f"  layer_range {body['layer_range']}, "
          f"timing_ms {body['timing_ms']:.2f}")

    print("\nPOST /v1/explain (background suppression on the text model)")
    resp = client.post("/v1/explain", json={
        "model_id": "tiny_text",
        "image": image_b64,
        "query": {"label": "class_0"},
        "suppress_background": True,
    })
    print(f"  method echoed as '{resp.json()['method']}'")

    print("\nPOST /v1/perturb")
    resp = client.post("/v1/perturb", json={
        "model_id": "tiny_cls",
        "image": image_b64,
        "query": {"class_index": 0},
        "mode": "positive",
    })
    print(pretty(resp.json()))

    print("\nerror handling: unknown model, bad query, oversized image")
    cases = [
        ("unknown model", {"model_id": "nope", "image": image_b64,
                           "query": {"class_index": 0}}),
        ("two query keys", {"model_id": "tiny_cls", "image": image_b64,
                            "query": {"label": "class_0", "class_index": 1}}),
        ("image too large", {"model_id": "tiny_cls",
                             "image": base64.b64encode(
                                 b"x" * (8 * 1024 * 1024 + 1)).decode(),
                             "query": {"class_index": 0}}),
    ]
    for name, payload in cases:
        resp = client.post("/v1/explain", json=payload)
        print(f"  {name}: {resp.status_code} {resp.json().get('error', '')[:60]}")


if __name__ == "__main__":
    main()
