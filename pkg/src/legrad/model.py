"""Vision-Transformer forward pass with full per-layer trace capture.

Blocks are pre-LN residual blocks::

    Zhat = Z + AttnOut(MSA(LN1(Z)))
    Z'   = Zhat + MLP(LN2(Zhat))

Two feature-aggregation strategies are supported: CLS-token pooling (token
row 0 carries the image embedding) and an attentional pooler (a learnable
query cross-attends over the patch tokens; pooler-only models carry no CLS
token). Linear layers follow the ``y = x @ W.T + b`` convention with
weights shaped ``[out, in]``; see docs/weights.md for the tensor-name
schema used in containers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import container, ops


class ModelError(ValueError):
    """Bundle or weight inconsistency."""


@dataclass(frozen=True)
class ViTConfig:
    layers: int          # L
    heads: int           # h
    width: int           # d, token width
    patch_size: int
    image_size: int      # square input resolution
    mlp_ratio: float = 4.0
    pooling: str = "cls_token"  # or "attn_pooler"

    def __post_init__(self):
        if self.pooling not in ("cls_token", "attn_pooler"):
            raise ModelError(f"unknown pooling kind '{self.pooling}'")
        if self.image_size % self.patch_size:
            raise ModelError("image_size must be divisible by patch_size")
        if self.width % self.heads:
            raise ModelError("width must be divisible by heads")
        grid = self.image_size // self.patch_size
        if grid * grid != self.num_patches:
            raise ModelError("patch count must be a perfect square")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def tokens(self) -> int:
        """Sequence length: n+1 with a CLS token, n for pooler-only models."""
        return self.num_patches + (1 if self.pooling == "cls_token" else 0)

    @property
    def head_dim(self) -> int:
        return self.width // self.heads


@dataclass
class BlockWeights:
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    qkv_weight: np.ndarray   # [3d, d]
    qkv_bias: np.ndarray     # [3d]
    out_weight: np.ndarray   # [d, d]
    out_bias: np.ndarray     # [d]
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    fc1_weight: np.ndarray   # [d_mlp, d]
    fc1_bias: np.ndarray
    fc2_weight: np.ndarray   # [d, d_mlp]
    fc2_bias: np.ndarray


@dataclass
class AttnPoolerWeights:
    query: np.ndarray            # [d] learnable pooling query
    key_weight: np.ndarray       # [d, d]
    value_weight: np.ndarray     # [d, d]
    key_bias: np.ndarray | None = None
    value_bias: np.ndarray | None = None
    # generalized pooler extras, all off in the minimal normative form
    out_weight: np.ndarray | None = None   # [d_embed, d]
    out_bias: np.ndarray | None = None
    ln_gain: np.ndarray | None = None      # token LN applied before K/V
    ln_bias: np.ndarray | None = None


@dataclass
class ViTWeights:
    patch_weight: np.ndarray       # [d, 3*p*p], patch pixels flattened (c, y, x)
    patch_bias: np.ndarray         # [d]
    pos_embed: np.ndarray          # [tokens, d]
    cls_token: np.ndarray | None   # [d]; None for pooler-only models
    blocks: list[BlockWeights]
    ln_final_gain: np.ndarray
    ln_final_bias: np.ndarray
    proj: np.ndarray | None = None  # [d, d_embed] output projection
    pooler: AttnPoolerWeights | None = None


@dataclass
class Classifier:
    matrix: np.ndarray        # [d_embed, C]
    labels: list[str]
    kind: str = "learned_head"  # or "text_embeddings"

    def __post_init__(self):
        if self.kind not in ("learned_head", "text_embeddings"):
            raise ModelError(f"unknown classifier kind '{self.kind}'")
        if self.matrix.ndim != 2:
            raise ModelError("classifier matrix must be 2-D [d_embed, classes]")
        if len(self.labels) != self.matrix.shape[1]:
            raise ModelError("label count must match classifier columns")
        if self.kind == "text_embeddings":
            norms = np.linalg.norm(self.matrix, axis=0)
            if np.any(np.abs(norms - 1.0) > 1e-4):
                raise ModelError("text-embedding columns must be unit-norm (±1e-4)")

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[1]


@dataclass
class Preprocessing:
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)
    resize: str = "bilinear"  # or "bicubic"


@dataclass
class ModelBundle:
    config: ViTConfig
    weights: ViTWeights
    classifier: Classifier
    preprocessing: Preprocessing = field(default_factory=Preprocessing)
    extra_embeddings: dict[str, np.ndarray] = field(default_factory=dict)
    provenance: str = ""
    dtype: np.dtype = np.dtype(np.float32)

    @property
    def embed_dim(self) -> int:
        return self.classifier.matrix.shape[0]


@dataclass
class ForwardTrace:
    """Everything captured during one forward pass.

    `tokens[l]` is Z^l for l = 0..L; `attention[l]` is the post-softmax map
    of block l+1. The remaining lists cache the per-layer intermediates the
    layer-local backward pass needs. `pooler_attention` is filled lazily,
    one entry per probed layer.
    """
    tokens: list[np.ndarray]                      # L+1 of [T, d]
    attention: list[np.ndarray]                   # L of [h, T, T]
    head_values: list[np.ndarray]                 # L of [h, T, d_h]
    residual_mid: list[np.ndarray]                # L of [T, d], Zhat
    mlp_preact: list[np.ndarray]                  # L of [T, d_mlp]
    pooler_attention: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def num_layers(self) -> int:
        return len(self.attention)


# ---------------------------------------------------------------------------
# preprocessing and embedding

def preprocess(image, preproc: Preprocessing, image_size: int) -> np.ndarray:
    """Decode/resize/crop/normalize an RGB raster to [3, S, S].

    The shorter side is resized to `image_size` (aspect preserved), then a
    center crop takes the square. Channels are normalized by the bundle's
    mean/std over [0, 1] pixel values.
    """
    if isinstance(image, (str, bytes)):
        raise TypeError("pass a PIL image or array, not a path")
    if isinstance(image, np.ndarray):
        arr = image
        if arr.ndim == 2:
            arr = np.stack([arr] * 3, axis=-1)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ModelError(f"expected HxWx3 raster, got {arr.shape}")
        if arr.dtype != np.uint8:
            arr = np.clip(np.asarray(arr, dtype=np.float64) * 255.0, 0, 255).astype(np.uint8)
        pil = Image.fromarray(arr, mode="RGB")
    else:
        pil = image.convert("RGB")
    if pil.width < 1 or pil.height < 1:
        raise ModelError("image must have at least one pixel per side")

    resample = Image.Resampling.BICUBIC if preproc.resize == "bicubic" else Image.Resampling.BILINEAR
    short = min(pil.width, pil.height)
    new_w = max(image_size, round(pil.width * image_size / short))
    new_h = max(image_size, round(pil.height * image_size / short))
    if (new_w, new_h) != (pil.width, pil.height):
        pil = pil.resize((new_w, new_h), resample)
    left = (pil.width - image_size) // 2
    top = (pil.height - image_size) // 2
    pil = pil.crop((left, top, left + image_size, top + image_size))

    x = np.asarray(pil, dtype=np.float64) / 255.0          # [S, S, 3]
    mean = np.asarray(preproc.mean, dtype=np.float64)
    std = np.asarray(preproc.std, dtype=np.float64)
    x = (x - mean) / std
    return np.ascontiguousarray(x.transpose(2, 0, 1))       # [3, S, S]


def image_to_patches(image_tensor: np.ndarray, patch_size: int) -> np.ndarray:
    """[3, S, S] -> [n, 3*p*p] rows in row-major patch order, (c, y, x) flatten."""
    c, s, _ = image_tensor.shape
    g = s // patch_size
    x = image_tensor.reshape(c, g, patch_size, g, patch_size)
    x = x.transpose(1, 3, 0, 2, 4)                            # [gy, gx, c, py, px]
    return np.ascontiguousarray(x.reshape(g * g, c * patch_size * patch_size))


def embed(image_tensor: np.ndarray, weights: ViTWeights, config: ViTConfig,
          dtype=np.float64) -> np.ndarray:
    """Patch-embed an image tensor and prepend the CLS token: Z^0 [T, d]."""
    patches = image_to_patches(np.asarray(image_tensor, dtype=dtype), config.patch_size)
    w = weights.patch_weight.astype(dtype, copy=False)
    b = weights.patch_bias.astype(dtype, copy=False)
    tok = ops.matmul(patches, w.T) + b                        # [n, d]
    if config.pooling == "cls_token":
        if weights.cls_token is None:
            raise ModelError("cls_token pooling requires a class-token vector")
        tok = np.concatenate([weights.cls_token.astype(dtype)[None, :], tok], axis=0)
    z0 = tok + weights.pos_embed.astype(dtype, copy=False)
    return ops.check_finite(z0, "embed")


# ---------------------------------------------------------------------------
# transformer blocks

def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    """[T, d] -> [h, T, d_h]."""
    t, d = x.shape
    return np.ascontiguousarray(x.reshape(t, heads, d // heads).transpose(1, 0, 2))


def merge_heads(x: np.ndarray) -> np.ndarray:
    """[h, T, d_h] -> [T, d]."""
    h, t, dh = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2).reshape(t, h * dh))


def _attention(x: np.ndarray, blk: BlockWeights, heads: int):
    """Multi-head self-attention on LN'd tokens; returns (out, A, V_heads)."""
    qkv = x @ blk.qkv_weight.T + blk.qkv_bias
    d = x.shape[1]
    q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
    qh, kh, vh = (split_heads(t, heads) for t in (q, k, v))
    scores = qh @ kh.transpose(0, 2, 1) / math.sqrt(d // heads)
    attn = ops.softmax(scores, axis=-1)                       # [h, T, T]
    out = merge_heads(attn @ vh) @ blk.out_weight.T + blk.out_bias
    return out, attn, vh


def block_forward(z: np.ndarray, blk: BlockWeights, heads: int):
    """One pre-LN residual block; returns (Z', A, V_heads, Zhat, mlp_preact)."""
    attn_out, attn, vh = _attention(ops.layer_norm(z, blk.ln1_gain, blk.ln1_bias), blk, heads)
    zhat = z + attn_out
    y = ops.layer_norm(zhat, blk.ln2_gain, blk.ln2_bias)
    pre = y @ blk.fc1_weight.T + blk.fc1_bias
    z_out = zhat + ops.gelu(pre) @ blk.fc2_weight.T + blk.fc2_bias
    return ops.check_finite(z_out, "block"), attn, vh, zhat, pre


def forward_trace(z0: np.ndarray, weights: ViTWeights, config: ViTConfig) -> ForwardTrace:
    """Run all blocks from Z^0, capturing tokens, attention maps and backward caches."""
    if z0.shape != (config.tokens, config.width):
        raise ModelError(f"Z^0 must be [{config.tokens}, {config.width}], got {z0.shape}")
    trace = ForwardTrace(tokens=[z0], attention=[], head_values=[],
                         residual_mid=[], mlp_preact=[])
    z = z0
    for l, blk in enumerate(weights.blocks, start=1):
        try:
            z, attn, vh, zhat, pre = block_forward(z, blk, config.heads)
        except ops.NumericError as exc:
            raise ops.NumericError(f"layer {l}: {exc}") from exc
        trace.tokens.append(z)
        trace.attention.append(attn)
        trace.head_values.append(vh)
        trace.residual_mid.append(zhat)
        trace.mlp_preact.append(pre)
    return trace


# ---------------------------------------------------------------------------
# feature aggregation and classification

def apply_embedding_head(z: np.ndarray, weights: ViTWeights) -> np.ndarray:
    """Final LN plus optional output projection (maps width d to d_embed)."""
    u = ops.layer_norm(z, weights.ln_final_gain, weights.ln_final_bias)
    return u @ weights.proj if weights.proj is not None else u


def pool_cls(trace: ForwardTrace, weights: ViTWeights, config: ViTConfig) -> np.ndarray:
    """Image embedding from the processed class token z^L_0."""
    if config.pooling != "cls_token":
        raise ModelError("pool_cls requires cls_token pooling")
    return apply_embedding_head(trace.tokens[-1][0], weights)


def pool_attn(tokens: np.ndarray, pooler: AttnPoolerWeights, heads: int):
    """Attentional pooling of a token matrix. Returns (z, A_pool [h, 1, n]).

    Minimal form: z = softmax(q . (W_K Z)^T / sqrt(d_h)) (W_V Z), multi-head
    split/merge; optional LN/out-projection extras are applied when present.
    """
    if pooler is None:
        raise ModelError("model has no attentional-pooler weights")
    z = tokens
    if pooler.ln_gain is not None:
        z = ops.layer_norm(z, pooler.ln_gain, pooler.ln_bias)
    k = z @ pooler.key_weight.T
    if pooler.key_bias is not None:
        k = k + pooler.key_bias
    v = z @ pooler.value_weight.T
    if pooler.value_bias is not None:
        v = v + pooler.value_bias
    d = z.shape[1]
    qh = pooler.query.reshape(heads, d // heads)              # [h, d_h]
    kh, vh = split_heads(k, heads), split_heads(v, heads)     # [h, n, d_h]
    scores = np.einsum("hd,hnd->hn", qh, kh) / math.sqrt(d // heads)
    attn = ops.softmax(scores, axis=-1)[:, None, :]           # [h, 1, n]
    pooled = (attn[:, 0, :, None] * vh).sum(axis=1).reshape(-1)  # concat heads -> [d]
    if pooler.out_weight is not None:
        pooled = pooled @ pooler.out_weight.T
        if pooler.out_bias is not None:
            pooled = pooled + pooler.out_bias
    return ops.check_finite(pooled, "pool_attn"), attn


def pool(trace: ForwardTrace, bundle: ModelBundle):
    """Bundle-level image embedding; returns (z, A_pool-or-None)."""
    if bundle.config.pooling == "cls_token":
        return pool_cls(trace, bundle.weights, bundle.config), None
    z, attn = pool_attn(trace.tokens[-1], bundle.weights.pooler, bundle.config.heads)
    trace.pooler_attention[trace.num_layers] = attn
    return z, attn


def classify(z: np.ndarray, classifier: Classifier) -> np.ndarray:
    """Raw class scores z . C (no softmax); unit-normalizes z for text classifiers."""
    if z.shape[-1] != classifier.matrix.shape[0]:
        raise ModelError(
            f"embedding dim {z.shape[-1]} != classifier dim {classifier.matrix.shape[0]}")
    if classifier.kind == "text_embeddings":
        z = z / np.linalg.norm(z)
    return ops.check_finite(z @ classifier.matrix, "classify")


def predict(bundle: ModelBundle, image_tensor: np.ndarray) -> np.ndarray:
    """Full forward on a preprocessed [3, S, S] tensor; returns class scores."""
    z0 = embed(image_tensor, bundle.weights, bundle.config, dtype=bundle.dtype)
    trace = forward_trace(z0, bundle.weights, bundle.config)
    z, _ = pool(trace, bundle)
    return classify(z, bundle.classifier)


# ---------------------------------------------------------------------------
# container IO

def _put(d, name, arr):
    if arr is not None:
        d[name] = arr


def bundle_to_tensors(bundle: ModelBundle) -> tuple[dict[str, np.ndarray], dict]:
    """Flatten a bundle to container tensors + metadata (schema in docs/weights.md)."""
    w = bundle.weights
    t: dict[str, np.ndarray] = {}
    _put(t, "patch_embed.weight", w.patch_weight)
    _put(t, "patch_embed.bias", w.patch_bias)
    _put(t, "pos_embed", w.pos_embed)
    _put(t, "cls_token", w.cls_token)
    for i, blk in enumerate(w.blocks):
        p = f"blocks.{i}."
        t[p + "ln1.weight"], t[p + "ln1.bias"] = blk.ln1_gain, blk.ln1_bias
        t[p + "attn.qkv.weight"], t[p + "attn.qkv.bias"] = blk.qkv_weight, blk.qkv_bias
        t[p + "attn.out.weight"], t[p + "attn.out.bias"] = blk.out_weight, blk.out_bias
        t[p + "ln2.weight"], t[p + "ln2.bias"] = blk.ln2_gain, blk.ln2_bias
        t[p + "mlp.fc1.weight"], t[p + "mlp.fc1.bias"] = blk.fc1_weight, blk.fc1_bias
        t[p + "mlp.fc2.weight"], t[p + "mlp.fc2.bias"] = blk.fc2_weight, blk.fc2_bias
    t["ln_final.weight"], t["ln_final.bias"] = w.ln_final_gain, w.ln_final_bias
    _put(t, "proj", w.proj)
    if w.pooler is not None:
        _put(t, "pooler.query", w.pooler.query)
        _put(t, "pooler.k.weight", w.pooler.key_weight)
        _put(t, "pooler.k.bias", w.pooler.key_bias)
        _put(t, "pooler.v.weight", w.pooler.value_weight)
        _put(t, "pooler.v.bias", w.pooler.value_bias)
        _put(t, "pooler.out.weight", w.pooler.out_weight)
        _put(t, "pooler.out.bias", w.pooler.out_bias)
        _put(t, "pooler.ln.weight", w.pooler.ln_gain)
        _put(t, "pooler.ln.bias", w.pooler.ln_bias)
    t["classifier.matrix"] = bundle.classifier.matrix
    for name, vec in bundle.extra_embeddings.items():
        t[f"embeddings.{name}"] = vec

    cfg = bundle.config
    metadata = {
        "model": {
            "layers": cfg.layers, "heads": cfg.heads, "width": cfg.width,
            "patch_size": cfg.patch_size, "image_size": cfg.image_size,
            "mlp_ratio": cfg.mlp_ratio, "pooling": cfg.pooling,
        },
        "classifier": {"kind": bundle.classifier.kind, "labels": bundle.classifier.labels},
        "preprocessing": {
            "mean": list(bundle.preprocessing.mean),
            "std": list(bundle.preprocessing.std),
            "resize": bundle.preprocessing.resize,
        },
        "provenance": bundle.provenance,
        "dtype": str(np.dtype(bundle.dtype)),
    }
    return t, metadata


def bundle_from_tensors(tensors: dict[str, np.ndarray], metadata: dict,
                        dtype=None) -> ModelBundle:
    m = metadata["model"]
    config = ViTConfig(layers=int(m["layers"]), heads=int(m["heads"]), width=int(m["width"]),
                       patch_size=int(m["patch_size"]), image_size=int(m["image_size"]),
                       mlp_ratio=float(m.get("mlp_ratio", 4.0)), pooling=m["pooling"])
    dtype = np.dtype(dtype if dtype is not None else metadata.get("dtype", "float32"))

    def get(name, required=True):
        if name not in tensors:
            if required:
                raise ModelError(f"container missing tensor '{name}'")
            return None
        return tensors[name].astype(dtype, copy=False)

    blocks = []
    for i in range(config.layers):
        p = f"blocks.{i}."
        blocks.append(BlockWeights(
            ln1_gain=get(p + "ln1.weight"), ln1_bias=get(p + "ln1.bias"),
            qkv_weight=get(p + "attn.qkv.weight"), qkv_bias=get(p + "attn.qkv.bias"),
            out_weight=get(p + "attn.out.weight"), out_bias=get(p + "attn.out.bias"),
            ln2_gain=get(p + "ln2.weight"), ln2_bias=get(p + "ln2.bias"),
            fc1_weight=get(p + "mlp.fc1.weight"), fc1_bias=get(p + "mlp.fc1.bias"),
            fc2_weight=get(p + "mlp.fc2.weight"), fc2_bias=get(p + "mlp.fc2.bias")))

    pooler = None
    if "pooler.query" in tensors:
        pooler = AttnPoolerWeights(
            query=get("pooler.query"),
            key_weight=get("pooler.k.weight"), value_weight=get("pooler.v.weight"),
            key_bias=get("pooler.k.bias", required=False),
            value_bias=get("pooler.v.bias", required=False),
            out_weight=get("pooler.out.weight", required=False),
            out_bias=get("pooler.out.bias", required=False),
            ln_gain=get("pooler.ln.weight", required=False),
            ln_bias=get("pooler.ln.bias", required=False))

    weights = ViTWeights(
        patch_weight=get("patch_embed.weight"), patch_bias=get("patch_embed.bias"),
        pos_embed=get("pos_embed"), cls_token=get("cls_token", required=False),
        blocks=blocks, ln_final_gain=get("ln_final.weight"),
        ln_final_bias=get("ln_final.bias"), proj=get("proj", required=False),
        pooler=pooler)

    cls_meta = metadata.get("classifier", {})
    classifier = Classifier(matrix=get("classifier.matrix"),
                            labels=list(cls_meta.get("labels", [])),
                            kind=cls_meta.get("kind", "learned_head"))
    pp = metadata.get("preprocessing", {})
    preproc = Preprocessing(mean=tuple(pp.get("mean", (0, 0, 0))),
                            std=tuple(pp.get("std", (1, 1, 1))),
                            resize=pp.get("resize", "bilinear"))
    extra = {name[len("embeddings."):]: arr.astype(dtype, copy=False)
             for name, arr in tensors.items() if name.startswith("embeddings.")}
    return ModelBundle(config=config, weights=weights, classifier=classifier,
                       preprocessing=preproc, extra_embeddings=extra,
                       provenance=metadata.get("provenance", ""), dtype=dtype)


def save_bundle(path, bundle: ModelBundle) -> None:
    tensors, metadata = bundle_to_tensors(bundle)
    container.save_container(path, tensors, metadata)


def load_bundle(path, dtype=None) -> ModelBundle:
    tensors, metadata = container.load_container(path)
    return bundle_from_tensors(tensors, metadata, dtype=dtype)
