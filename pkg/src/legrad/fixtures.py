"""Deterministic synthetic models and gradient-check harness.

Everything here is seeded through a splitmix64 generator with per-tensor
streams derived from FNV-1a hashes of tensor names, so fixture bundles are
bit-identical across platforms and numpy versions (no dependency on numpy's
own RNG internals).
"""

from __future__ import annotations

import numpy as np

from . import container, explain, model, ops

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class SplitMix64:
    """64-bit splitmix generator (Steele/Lea/Flood finalizer constants)."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def next_float(self) -> float:
        # top 53 bits -> [0, 1)
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        vals = np.array([self.next_float() for _ in range(n)], dtype=np.float64)
        return (low + (high - low) * vals).reshape(shape)


def fnv1a64(name: str) -> int:
    h = _FNV_OFFSET
    for byte in name.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def stream(seed: int, name: str) -> SplitMix64:
    """Independent generator for one named tensor."""
    return SplitMix64((seed ^ fnv1a64(name)) & _MASK64)


def _weight(seed: int, name: str, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return stream(seed, name).uniform(-bound, bound, shape)


def _gain(seed: int, name: str, size: int) -> np.ndarray:
    return 1.0 + stream(seed, name).uniform(-0.1, 0.1, (size,))


def _bias(seed: int, name: str, size: int) -> np.ndarray:
    return stream(seed, name).uniform(-0.01, 0.01, (size,))


def make_tiny_vit(layers: int = 2, heads: int = 2, width: int = 16,
                  patch_size: int = 4, image_size: int = 8,
                  pooling: str = "cls_token", num_classes: int = 3,
                  classifier_kind: str = "learned_head", seed: int = 0,
                  embed_dim: int | None = None, with_proj: bool = False,
                  pooler_extras: bool = False,
                  dtype=np.float64) -> model.ModelBundle:
    """Small but fully featured synthetic transformer bundle.

    Weights are uniform in +-1/sqrt(fan_in), LN gains near 1, biases near 0.
    Text-embedding classifiers get unit-norm columns. `pooler_extras` adds
    the optional pooler LN and output projection.
    """
    cfg = model.ViTConfig(layers=layers, heads=heads, width=width,
                          patch_size=patch_size, image_size=image_size,
                          pooling=pooling)
    d = width
    patch_dim = 3 * patch_size * patch_size
    blocks = []
    for i in range(layers):
        p = f"blocks.{i}."
        blocks.append(model.BlockWeights(
            ln1_gain=_gain(seed, p + "ln1.gain", d),
            ln1_bias=_bias(seed, p + "ln1.bias", d),
            qkv_weight=_weight(seed, p + "attn.qkv.weight", (3 * d, d), d),
            qkv_bias=_bias(seed, p + "attn.qkv.bias", 3 * d),
            out_weight=_weight(seed, p + "attn.out.weight", (d, d), d),
            out_bias=_bias(seed, p + "attn.out.bias", d),
            ln2_gain=_gain(seed, p + "ln2.gain", d),
            ln2_bias=_bias(seed, p + "ln2.bias", d),
            fc1_weight=_weight(seed, p + "mlp.fc1.weight", (4 * d, d), d),
            fc1_bias=_bias(seed, p + "mlp.fc1.bias", 4 * d),
            fc2_weight=_weight(seed, p + "mlp.fc2.weight", (d, 4 * d), 4 * d),
            fc2_bias=_bias(seed, p + "mlp.fc2.bias", d),
        ))

    pooler = None
    if pooling == "attn_pooler":
        pooler = model.AttnPoolerWeights(
            query=_weight(seed, "pooler.query", (d,), d),
            key_weight=_weight(seed, "pooler.key.weight", (d, d), d),
            value_weight=_weight(seed, "pooler.value.weight", (d, d), d),
            key_bias=_bias(seed, "pooler.key.bias", d),
            value_bias=_bias(seed, "pooler.value.bias", d),
            out_weight=_weight(seed, "pooler.out.weight", (d, d), d)
            if pooler_extras else None,
            out_bias=_bias(seed, "pooler.out.bias", d) if pooler_extras else None,
            ln_gain=_gain(seed, "pooler.ln.gain", d) if pooler_extras else None,
            ln_bias=_bias(seed, "pooler.ln.bias", d) if pooler_extras else None,
        )

    d_embed = embed_dim or d
    proj = _weight(seed, "proj", (d, d_embed), d) if with_proj or embed_dim else None
    tokens = cfg.num_patches + (1 if pooling == "cls_token" else 0)
    weights = model.ViTWeights(
        patch_weight=_weight(seed, "patch.weight", (d, patch_dim), patch_dim),
        patch_bias=_bias(seed, "patch.bias", d),
        pos_embed=stream(seed, "pos_embed").uniform(-0.02, 0.02, (tokens, d)),
        cls_token=stream(seed, "cls_token").uniform(-0.02, 0.02, (d,))
        if pooling == "cls_token" else None,
        blocks=blocks,
        ln_final_gain=_gain(seed, "ln_final.gain", d),
        ln_final_bias=_bias(seed, "ln_final.bias", d),
        proj=proj,
        pooler=pooler,
    )

    mat = stream(seed, "classifier.matrix").uniform(-1.0, 1.0, (d_embed, num_classes))
    if classifier_kind == "text_embeddings":
        mat = mat / np.linalg.norm(mat, axis=0, keepdims=True)
    classifier = model.Classifier(
        matrix=mat, labels=[f"class_{i}" for i in range(num_classes)],
        kind=classifier_kind)

    empty = stream(seed, "embeddings.empty_prompt").uniform(-1.0, 1.0, (d_embed,))
    if classifier_kind == "text_embeddings":
        empty = empty / np.linalg.norm(empty)

    return model.ModelBundle(
        config=cfg, weights=weights, classifier=classifier,
        preprocessing=model.Preprocessing(mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5)),
        extra_embeddings={"empty_prompt": empty},
        provenance={"source": "synthetic", "seed": seed},
        dtype=np.dtype(dtype),
    )


def random_image_tensor(bundle: model.ModelBundle, seed: int = 0) -> np.ndarray:
    """Preprocessed-image-shaped tensor in [-1, 1], seeded independently."""
    s = bundle.config.image_size
    return stream(seed, "input.image").uniform(-1.0, 1.0, (3, s, s))


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def run_fd_battery(bundle: model.ModelBundle, layers=None, epsilon: float = 1e-4,
                   seed: int = 0, grad_fn=None) -> dict:
    """Compare analytic attention gradients against central differences.

    Returns per-layer max relative error plus the overall max. `grad_fn`
    is injectable so a deliberately broken gradient can be shown to fail.
    """
    grad_fn = grad_fn or explain.grad_attention
    tensor = random_image_tensor(bundle, seed=seed)
    z0 = model.embed(tensor, bundle.weights, bundle.config, dtype=bundle.dtype)
    trace = model.forward_trace(z0, bundle.weights, bundle.config)
    layers = list(layers) if layers is not None else list(range(1, trace.num_layers + 1))
    query = explain.Query(bundle.classifier, 0)

    per_layer = {}
    for layer in layers:
        analytic = grad_fn(trace, layer, query, bundle).grad
        numeric = explain.fd_grad_attention(bundle, z0, layer, query, epsilon=epsilon)
        per_layer[layer] = float(relative_error(analytic, numeric).max())
    return {"per_layer": per_layer, "max_rel_err": max(per_layer.values())}


BATTERY_CONFIGS = tuple(
    dict(layers=L, heads=h, width=w, image_size=s, pooling=p)
    for p in ("cls_token", "attn_pooler")
    for L, h, w, s in (
        (1, 1, 8, 8),
        (2, 2, 16, 8),
        (3, 2, 16, 16),
        (2, 1, 8, 16),
        (2, 2, 8, 8),
    )
)


def battery_bundles():
    """The 20-model gradient-check matrix: every config in two flavors.

    Covers both pooling modes, 1-3 layers, 1-2 heads, widths 8/16, patch
    grids 2x2 and 4x4, plain and text-embedding classifiers, and pooler
    extras where applicable. All float64.
    """
    out = []
    for i, cfg in enumerate(BATTERY_CONFIGS):
        out.append(make_tiny_vit(seed=100 + i, **cfg))
        out.append(make_tiny_vit(seed=200 + i, classifier_kind="text_embeddings",
                                 with_proj=True,
                                 pooler_extras=cfg["pooling"] == "attn_pooler",
                                 **cfg))
    return out


# ---------------------------------------------------------------------------
# golden files under fixtures/

GOLDEN_BUNDLES = {
    "tiny_cls": dict(layers=3, heads=2, width=16, seed=5, image_size=16),
    "tiny_pooler": dict(layers=2, heads=2, width=16, seed=6, image_size=16,
                        pooling="attn_pooler", pooler_extras=True),
    "tiny_text": dict(layers=2, heads=2, width=16, seed=8, image_size=16,
                      classifier_kind="text_embeddings", with_proj=True,
                      embed_dim=12),
}


def sample_image_bytes() -> bytes:
    """The canonical 16x16 test image as PNG bytes."""
    import io

    from PIL import Image

    arr = stream(42, "test.image").uniform(0, 255, (16, 16, 3)).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def write_goldens(out_dir: str) -> list[str]:
    """Regenerate every checked-in golden under `out_dir`.

    Returns the relative paths written (excluding the checksum file).
    The API-response goldens are the exact bytes the server returns, so
    the frontend can test against real payloads without a server.
    """
    import base64
    import hashlib
    import json
    import os

    from fastapi.testclient import TestClient

    from . import server

    written: list[str] = []

    def emit(rel: str, blob: bytes):
        path = os.path.join(out_dir, rel)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(blob)
        written.append(rel)

    bundles = {name: make_tiny_vit(**kw) for name, kw in GOLDEN_BUNDLES.items()}
    for name, bundle in bundles.items():
        tensors, meta = model.bundle_to_tensors(bundle)
        emit(f"models/{name}.lgtc", container.write_container(tensors, meta))

    png = sample_image_bytes()
    emit("images/sample.png", png)

    client = TestClient(server.create_app(bundles=bundles))
    req = {"model_id": "tiny_cls", "image": base64.b64encode(png).decode(),
           "query": {"label": "class_1"}}
    emit("golden/explain_default.json",
         client.post("/v1/explain", json=req).content)
    emit("golden/explain_lastlayer.json",
         client.post("/v1/explain", json={**req, "layer_range": [3]}).content)
    emit("golden/perturb.json", client.post("/v1/perturb", json=req).content)
    emit("golden/models.json", client.get("/v1/models").content)

    lines = []
    for rel in sorted(written):
        with open(os.path.join(out_dir, rel), "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        lines.append(f"{digest}  {rel}")
    with open(os.path.join(out_dir, "SHA256SUMS"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return written


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="python -m legrad.fixtures",
        description="regenerate the golden files under fixtures/")
    parser.add_argument("--out", default="fixtures")
    args = parser.parse_args(argv)
    written = write_goldens(args.out)
    for rel in written:
        print(f"wrote {args.out}/{rel}")
    print(f"wrote {args.out}/SHA256SUMS")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
