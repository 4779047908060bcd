"""Self-contained torch implementation of the engine's ViT forward pass.

Weights live in a flat dict keyed by the container tensor names from
docs/weights.md, and the forward pass reads them by those names. The
math here uses torch kernels end to end, so agreement with the numpy
engine is a genuine two-implementation check, not a tautology.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

LN_EPS = 1e-5


def _uniform(gen, shape, scale):
    return (torch.rand(shape, generator=gen, dtype=torch.float64) * 2 - 1) * scale


def make_tiny(seed: int = 0, layers: int = 2, heads: int = 2, width: int = 16,
              patch_size: int = 4, image_size: int = 16,
              pooling: str = "cls_token", num_classes: int = 3,
              mlp_ratio: float = 4.0, classifier_kind: str = "learned_head"):
    """Random tiny model in container-schema form: (params, metadata)."""
    if width % heads:
        raise ValueError("width must divide evenly into heads")
    gen = torch.Generator().manual_seed(seed)
    d, hidden = width, int(round(width * mlp_ratio))
    n = (image_size // patch_size) ** 2
    tokens = n + 1 if pooling == "cls_token" else n

    p: dict[str, torch.Tensor] = {}
    p["patch_embed.weight"] = _uniform(gen, (d, 3 * patch_size ** 2),
                                       1 / math.sqrt(3 * patch_size ** 2))
    p["patch_embed.bias"] = _uniform(gen, (d,), 0.01)
    p["pos_embed"] = _uniform(gen, (tokens, d), 0.02)
    if pooling == "cls_token":
        p["cls_token"] = _uniform(gen, (d,), 0.02)
    for i in range(layers):
        pre = f"blocks.{i}."
        p[pre + "ln1.weight"] = 1 + _uniform(gen, (d,), 0.1)
        p[pre + "ln1.bias"] = _uniform(gen, (d,), 0.01)
        p[pre + "attn.qkv.weight"] = _uniform(gen, (3 * d, d), 1 / math.sqrt(d))
        p[pre + "attn.qkv.bias"] = _uniform(gen, (3 * d,), 0.01)
        p[pre + "attn.out.weight"] = _uniform(gen, (d, d), 1 / math.sqrt(d))
        p[pre + "attn.out.bias"] = _uniform(gen, (d,), 0.01)
        p[pre + "ln2.weight"] = 1 + _uniform(gen, (d,), 0.1)
        p[pre + "ln2.bias"] = _uniform(gen, (d,), 0.01)
        p[pre + "mlp.fc1.weight"] = _uniform(gen, (hidden, d), 1 / math.sqrt(d))
        p[pre + "mlp.fc1.bias"] = _uniform(gen, (hidden,), 0.01)
        p[pre + "mlp.fc2.weight"] = _uniform(gen, (d, hidden), 1 / math.sqrt(hidden))
        p[pre + "mlp.fc2.bias"] = _uniform(gen, (d,), 0.01)
    p["ln_final.weight"] = 1 + _uniform(gen, (d,), 0.1)
    p["ln_final.bias"] = _uniform(gen, (d,), 0.01)
    if pooling == "attn_pooler":
        p["pooler.query"] = _uniform(gen, (d,), 1 / math.sqrt(d))
        p["pooler.k.weight"] = _uniform(gen, (d, d), 1 / math.sqrt(d))
        p["pooler.v.weight"] = _uniform(gen, (d, d), 1 / math.sqrt(d))

    clf = _uniform(gen, (d, num_classes), 1 / math.sqrt(d))
    if classifier_kind == "text_embeddings":
        clf = clf / clf.norm(dim=0, keepdim=True)
    p["classifier.matrix"] = clf
    empty = _uniform(gen, (d,), 1.0)
    p["embeddings.empty_prompt"] = empty / empty.norm()

    meta = {
        "model": {"layers": layers, "heads": heads, "width": d,
                  "patch_size": patch_size, "image_size": image_size,
                  "mlp_ratio": mlp_ratio, "pooling": pooling},
        "classifier": {"kind": classifier_kind,
                       "labels": [f"class_{c}" for c in range(num_classes)]},
        "preprocessing": {"mean": [0.5, 0.5, 0.5], "std": [0.5, 0.5, 0.5],
                          "resize": "bilinear"},
        "provenance": {"source": "vit-export tiny-random", "seed": seed},
        "dtype": "float64",
    }
    return p, meta


def _block(z, p, pre, heads):
    t, d = z.shape
    dh = d // heads
    x = F.layer_norm(z, (d,), p[pre + "ln1.weight"], p[pre + "ln1.bias"], LN_EPS)
    qkv = x @ p[pre + "attn.qkv.weight"].T + p[pre + "attn.qkv.bias"]
    q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
    qh = q.view(t, heads, dh).transpose(0, 1)
    kh = k.view(t, heads, dh).transpose(0, 1)
    vh = v.view(t, heads, dh).transpose(0, 1)
    attn = torch.softmax(qh @ kh.transpose(1, 2) / math.sqrt(dh), dim=-1)
    merged = (attn @ vh).transpose(0, 1).reshape(t, d)
    z = z + merged @ p[pre + "attn.out.weight"].T + p[pre + "attn.out.bias"]
    y = F.layer_norm(z, (d,), p[pre + "ln2.weight"], p[pre + "ln2.bias"], LN_EPS)
    h = F.gelu(y @ p[pre + "mlp.fc1.weight"].T + p[pre + "mlp.fc1.bias"],
               approximate="tanh")
    return z + h @ p[pre + "mlp.fc2.weight"].T + p[pre + "mlp.fc2.bias"]


def forward(p: dict, meta: dict, image: torch.Tensor):
    """Full reference forward: returns (final tokens [T, d], scores [C])."""
    m = meta["model"]
    d, heads, patch = m["width"], m["heads"], m["patch_size"]
    conv_w = p["patch_embed.weight"].view(d, 3, patch, patch)
    grid = F.conv2d(image.unsqueeze(0).to(torch.float64), conv_w,
                    p["patch_embed.bias"], stride=patch)
    tok = grid.flatten(2).squeeze(0).T                      # [n, d]
    if m["pooling"] == "cls_token":
        tok = torch.cat([p["cls_token"].unsqueeze(0), tok], dim=0)
    z = tok + p["pos_embed"]

    for i in range(m["layers"]):
        z = _block(z, p, f"blocks.{i}.", heads)
    final_tokens = z

    if m["pooling"] == "cls_token":
        pooled = F.layer_norm(z[0], (d,), p["ln_final.weight"],
                              p["ln_final.bias"], LN_EPS)
        if "proj" in p:
            pooled = pooled @ p["proj"]
    else:
        zp = z
        if "pooler.ln.weight" in p:
            zp = F.layer_norm(zp, (d,), p["pooler.ln.weight"],
                              p["pooler.ln.bias"], LN_EPS)
        k = zp @ p["pooler.k.weight"].T
        if "pooler.k.bias" in p:
            k = k + p["pooler.k.bias"]
        v = zp @ p["pooler.v.weight"].T
        if "pooler.v.bias" in p:
            v = v + p["pooler.v.bias"]
        dh = d // heads
        qh = p["pooler.query"].view(heads, dh)
        kh = k.view(-1, heads, dh).transpose(0, 1)
        vh = v.view(-1, heads, dh).transpose(0, 1)
        scores = (qh.unsqueeze(1) * kh).sum(-1) / math.sqrt(dh)   # [h, n]
        attn = torch.softmax(scores, dim=-1)
        pooled = (attn.unsqueeze(-1) * vh).sum(dim=1).reshape(-1)
        if "pooler.out.weight" in p:
            pooled = pooled @ p["pooler.out.weight"].T
            if "pooler.out.bias" in p:
                pooled = pooled + p["pooler.out.bias"]

    if meta["classifier"]["kind"] == "text_embeddings":
        pooled = pooled / pooled.norm()
    return final_tokens, pooled @ p["classifier.matrix"]


def reference_input(meta: dict, seed: int = 0) -> torch.Tensor:
    """Deterministic normalized-space input tensor for parity recording."""
    m = meta["model"]
    gen = torch.Generator().manual_seed(seed ^ 0x5EED)
    return _uniform(gen, (3, m["image_size"], m["image_size"]), 1.0)
