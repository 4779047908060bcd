"""Export flows: schema validation, the tiny parity fixture, text
classifiers, and the open_clip checkpoint mapping."""

from __future__ import annotations

import hashlib
import os

import numpy as np
import torch

from . import container, reference


class SchemaError(Exception):
    pass


class CheckpointError(Exception):
    pass


def _expected_shapes(meta: dict) -> dict[str, tuple]:
    m = meta["model"]
    d, patch, img = m["width"], m["patch_size"], m["image_size"]
    hidden = int(round(d * m.get("mlp_ratio", 4.0)))
    n = (img // patch) ** 2
    tokens = n + 1 if m["pooling"] == "cls_token" else n
    shapes = {
        "patch_embed.weight": (d, 3 * patch * patch),
        "patch_embed.bias": (d,),
        "pos_embed": (tokens, d),
        "ln_final.weight": (d,), "ln_final.bias": (d,),
    }
    if m["pooling"] == "cls_token":
        shapes["cls_token"] = (d,)
    else:
        shapes["pooler.query"] = (d,)
        shapes["pooler.k.weight"] = (d, d)
        shapes["pooler.v.weight"] = (d, d)
    for i in range(m["layers"]):
        pre = f"blocks.{i}."
        shapes.update({
            pre + "ln1.weight": (d,), pre + "ln1.bias": (d,),
            pre + "attn.qkv.weight": (3 * d, d), pre + "attn.qkv.bias": (3 * d,),
            pre + "attn.out.weight": (d, d), pre + "attn.out.bias": (d,),
            pre + "ln2.weight": (d,), pre + "ln2.bias": (d,),
            pre + "mlp.fc1.weight": (hidden, d), pre + "mlp.fc1.bias": (hidden,),
            pre + "mlp.fc2.weight": (d, hidden), pre + "mlp.fc2.bias": (d,),
        })
    return shapes


def validate_schema(tensors: dict, meta: dict) -> None:
    """Check every required tensor exists with the documented shape."""
    for name, want in _expected_shapes(meta).items():
        if name not in tensors:
            raise SchemaError(f"missing tensor '{name}'")
        got = tuple(tensors[name].shape)
        if got != want:
            raise SchemaError(f"tensor '{name}': shape {got}, expected {want}")
    d = meta["model"]["width"]
    embed_dim = tensors["proj"].shape[1] if "proj" in tensors else d
    if "proj" in tensors and tensors["proj"].shape[0] != d:
        raise SchemaError(f"proj rows {tensors['proj'].shape[0]} != width {d}")
    clf = tensors.get("classifier.matrix")
    if clf is not None and clf.shape[0] != embed_dim:
        raise SchemaError(
            f"classifier dim {clf.shape[0]} != embedding dim {embed_dim}")
    for name, arr in tensors.items():
        if name.startswith("embeddings.") and arr.shape != (embed_dim,):
            raise SchemaError(f"'{name}' shape {tuple(arr.shape)} != ({embed_dim},)")


def export_text_classifier(encode, labels: list[str],
                           template: str = "a photo of a {}",
                           empty_prompt: str = "a photo of"):
    """Build a unit-norm text classifier matrix plus the empty-prompt column.

    `encode` maps a list of prompt strings to an [e, k] array-like; the
    open_clip path supplies the real text tower, tests use stubs. The
    bare `empty_prompt` string (no class word) backs background
    suppression.
    """
    if len(set(labels)) != len(labels):
        dupes = sorted({x for x in labels if labels.count(x) > 1})
        raise ValueError(f"duplicate labels: {dupes}")
    if not labels:
        raise ValueError("no labels given")
    prompts = [template.format(label) for label in labels]
    mat = np.asarray(encode(prompts), dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != len(labels):
        raise SchemaError(f"encoder returned shape {mat.shape}, expected [e, {len(labels)}]")
    mat = mat / np.linalg.norm(mat, axis=0, keepdims=True)
    empty = np.asarray(encode([empty_prompt]), dtype=np.float64)[:, 0]
    empty = empty / np.linalg.norm(empty)
    return mat, empty


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_checksums(out_dir: str, names: list[str]) -> str:
    lines = [f"{_sha256(os.path.join(out_dir, n))}  {n}" for n in sorted(names)]
    path = os.path.join(out_dir, "SHA256SUMS")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def export_tiny(out_dir: str, seed: int = 0, pooling: str = "cls_token",
                labels: list[str] | None = None) -> dict[str, str]:
    """Tiny random model + recorded reference forward, both precisions.

    Produces tiny_model.lgtc (float64), tiny_model_f32.lgtc, and
    reference.lgtc holding the input tensor, the final token matrix and
    the class scores of the torch forward pass.
    """
    params, meta = reference.make_tiny(seed=seed, pooling=pooling)
    if labels:
        if len(labels) != len(meta["classifier"]["labels"]):
            params["classifier.matrix"] = reference._uniform(
                torch.Generator().manual_seed(seed + 1),
                (meta["model"]["width"], len(labels)), 0.25)
        meta["classifier"]["labels"] = list(labels)

    tensors = {k: v.numpy() for k, v in params.items()}
    validate_schema(tensors, meta)

    os.makedirs(out_dir, exist_ok=True)
    model_path = os.path.join(out_dir, "tiny_model.lgtc")
    container.save(model_path, tensors, meta)

    meta32 = {**meta, "dtype": "float32"}
    f32_path = os.path.join(out_dir, "tiny_model_f32.lgtc")
    container.save(f32_path, {k: v.astype(np.float32) for k, v in tensors.items()},
                   meta32)

    image = reference.reference_input(meta, seed=seed)
    final_tokens, scores = reference.forward(params, meta, image)
    ref_path = os.path.join(out_dir, "reference.lgtc")
    container.save(ref_path, {
        "input": image.numpy(),
        "final_tokens": final_tokens.numpy(),
        "scores": scores.numpy(),
    }, {
        "producer": "vit-export 0.1.0",
        "model_file": "tiny_model.lgtc",
        "seed": seed,
        "tolerance": 1e-4,
    })

    write_checksums(out_dir, ["tiny_model.lgtc", "tiny_model_f32.lgtc",
                              "reference.lgtc"])
    return {"model": model_path, "model_f32": f32_path, "reference": ref_path}


# ---------------------------------------------------------------------------
# open_clip checkpoints

_CLIP_BLOCK_MAP = {
    "ln_1.weight": "ln1.weight", "ln_1.bias": "ln1.bias",
    "attn.in_proj_weight": "attn.qkv.weight", "attn.in_proj_bias": "attn.qkv.bias",
    "attn.out_proj.weight": "attn.out.weight", "attn.out_proj.bias": "attn.out.bias",
    "ln_2.weight": "ln2.weight", "ln_2.bias": "ln2.bias",
    "mlp.c_fc.weight": "mlp.fc1.weight", "mlp.c_fc.bias": "mlp.fc1.bias",
    "mlp.c_proj.weight": "mlp.fc2.weight", "mlp.c_proj.bias": "mlp.fc2.bias",
}


def map_open_clip_visual(state: dict, image_size: int) -> tuple[dict, dict]:
    """Rename an open_clip visual-tower state dict to the container schema.

    The engine has no pre-transformer LayerNorm, so a non-identity
    `visual.ln_pre` cannot be represented and is rejected.
    """
    def g(name):
        if name not in state:
            raise SchemaError(f"checkpoint missing '{name}'")
        return np.asarray(state[name], dtype=np.float64)

    conv = g("visual.conv1.weight")             # [d, 3, p, p], no bias in CLIP
    d, _, patch, _ = conv.shape
    if "visual.ln_pre.weight" in state:
        gain, bias = g("visual.ln_pre.weight"), g("visual.ln_pre.bias")
        if not (np.allclose(gain, 1.0) and np.allclose(bias, 0.0)):
            raise SchemaError(
                "checkpoint has a non-identity pre-transformer LayerNorm "
                "(visual.ln_pre); the engine architecture cannot express it")

    tensors = {
        "patch_embed.weight": conv.reshape(d, -1),
        "patch_embed.bias": np.zeros(d),
        "cls_token": g("visual.class_embedding"),
        "pos_embed": g("visual.positional_embedding"),
        "ln_final.weight": g("visual.ln_post.weight"),
        "ln_final.bias": g("visual.ln_post.bias"),
    }
    if "visual.proj" in state:
        tensors["proj"] = g("visual.proj")

    layers = 0
    while f"visual.transformer.resblocks.{layers}.ln_1.weight" in state:
        layers += 1
    if layers == 0:
        raise SchemaError("no transformer blocks found under visual.transformer")
    for i in range(layers):
        for src, dst in _CLIP_BLOCK_MAP.items():
            tensors[f"blocks.{i}.{dst}"] = g(
                f"visual.transformer.resblocks.{i}.{src}")

    hidden = tensors["blocks.0.mlp.fc1.weight"].shape[0]
    heads = d // 64 if d % 64 == 0 else 1       # CLIP convention: 64-dim heads
    meta = {
        "model": {"layers": layers, "heads": heads, "width": d,
                  "patch_size": patch, "image_size": image_size,
                  "mlp_ratio": hidden / d, "pooling": "cls_token"},
        "classifier": {"kind": "text_embeddings", "labels": []},
        "preprocessing": {"mean": [0.48145466, 0.4578275, 0.40821073],
                          "std": [0.26862954, 0.26130258, 0.27577711],
                          "resize": "bicubic"},
        "provenance": {"source": "open_clip"},
        "dtype": "float32",
    }
    return tensors, meta


def load_open_clip(model_name: str, pretrained: str):
    """Lazy open_clip import so the tiny-fixture path needs no extras."""
    try:
        import open_clip
    except ImportError as exc:
        raise CheckpointError(
            "open_clip_torch is not installed; install the 'clip' extra "
            "(pip install vit-export[clip]) and ensure the checkpoint "
            f"'{pretrained}' is downloadable") from exc
    try:
        model, _, preprocess = open_clip.create_model_and_transforms(
            model_name, pretrained=pretrained)
    except Exception as exc:
        raise CheckpointError(
            f"cannot obtain checkpoint {model_name}/{pretrained}: {exc}") from exc
    return model, preprocess


def export_checkpoint(model_name: str, pretrained: str, out_path: str,
                      labels: list[str] | None = None) -> str:
    model, _ = load_open_clip(model_name, pretrained)
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    image_size = model.visual.image_size
    if isinstance(image_size, (tuple, list)):
        image_size = image_size[0]
    tensors, meta = map_open_clip_visual(state, image_size)

    if labels:
        import open_clip
        tokenizer = open_clip.get_tokenizer(model_name)

        def encode(prompts):
            with torch.no_grad():
                feats = model.encode_text(tokenizer(prompts))
            return feats.double().numpy().T

        mat, empty = export_text_classifier(encode, labels)
        tensors["classifier.matrix"] = mat
        tensors["embeddings.empty_prompt"] = empty
        meta["classifier"]["labels"] = list(labels)
    else:
        embed_dim = tensors["proj"].shape[1] if "proj" in tensors else \
            meta["model"]["width"]
        tensors["classifier.matrix"] = np.zeros((embed_dim, 0))

    validate_schema(tensors, meta)
    meta["provenance"].update({"checkpoint": f"{model_name}/{pretrained}"})
    container.save(out_path, tensors, meta)
    return out_path
