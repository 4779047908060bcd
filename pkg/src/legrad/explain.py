"""Layerwise attention-gradient explainability and baseline methods.

The main pipeline, per probed layer l:

1. score the query class from the layer's intermediate tokens,
2. take the analytic gradient of that score w.r.t. the layer's
   post-softmax attention map, treating the map as a leaf (no flow into
   earlier layers),
3. ReLU the gradient and average over heads and query rows,
4. average the per-layer maps over the selected layers, drop the CLS
   entry, reshape to the patch grid, upsample and min-max normalize.

For CLS-pooled models the per-layer score applies the model's final
LN/projection head to the layer's class token; for attentional-pooler
models the pooler is applied to the layer's tokens and the gradient is
taken w.r.t. the pooler attention map instead.

Every analytic gradient here is checked against central finite
differences (`fd_grad_attention`) in the test battery.
"""

from __future__ import annotations

import difflib
import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .heatmap import Heatmap, finalize_patch_map, background_suppress  # noqa: F401 (re-export)
from .model import (Classifier, ForwardTrace, ModelBundle, embed, forward_trace,
                    pool_attn, preprocess)

METHODS = ("legrad", "raw_attention", "rollout", "gradcam", "attentioncam")


class QueryError(ValueError):
    """Unresolvable query (unknown label, bad index, missing embedding)."""


class LayerRangeError(ValueError):
    """Layer selection outside [1, L] or empty."""


@dataclass(frozen=True)
class Query:
    classifier: Classifier
    class_index: int

    def __post_init__(self):
        if not 0 <= self.class_index < self.classifier.num_classes:
            raise QueryError(f"class index {self.class_index} out of range "
                             f"[0, {self.classifier.num_classes})")

    @property
    def column(self) -> np.ndarray:
        return self.classifier.matrix[:, self.class_index]

    @property
    def normalize_embedding(self) -> bool:
        return self.classifier.kind == "text_embeddings"


def resolve_query(bundle: ModelBundle, label: str | None = None,
                  class_index: int | None = None,
                  embedding: str | None = None) -> Query:
    """Build a Query from exactly one of label / class index / embedding name."""
    given = [x is not None for x in (label, class_index, embedding)]
    if sum(given) != 1:
        raise QueryError("provide exactly one of label, class_index, embedding")
    if class_index is not None:
        return Query(bundle.classifier, int(class_index))
    if label is not None:
        labels = bundle.classifier.labels
        lowered = [x.lower() for x in labels]
        if label.lower() not in lowered:
            close = difflib.get_close_matches(label.lower(), lowered, n=3)
            hint = f"; did you mean: {', '.join(close)}" if close else ""
            raise QueryError(f"unknown label '{label}'{hint}")
        return Query(bundle.classifier, lowered.index(label.lower()))
    if embedding not in bundle.extra_embeddings:
        known = ", ".join(sorted(bundle.extra_embeddings)) or "(none)"
        raise QueryError(f"unknown embedding '{embedding}'; available: {known}")
    vec = np.asarray(bundle.extra_embeddings[embedding], dtype=bundle.dtype)
    kind = bundle.classifier.kind
    if kind == "text_embeddings":
        vec = vec / np.linalg.norm(vec)
    return Query(Classifier(matrix=vec[:, None], labels=[embedding], kind=kind), 0)


# ---------------------------------------------------------------------------
# layer ranges

def default_layer_range(num_layers: int) -> list[int]:
    """Trailing 40% of the blocks (ceil), the recommended probe range."""
    take = max(1, math.ceil(0.4 * num_layers))
    return list(range(num_layers - take + 1, num_layers + 1))


def resolve_layer_spec(spec: str | list[int] | None, num_layers: int) -> list[int]:
    """Parse "last40%" / "all" / "3,7,12" / explicit int list into layer indices."""
    if spec is None or spec == "last40%":
        layers = default_layer_range(num_layers)
    elif spec == "all":
        layers = list(range(1, num_layers + 1))
    elif isinstance(spec, str):
        try:
            layers = sorted({int(part) for part in spec.split(",") if part.strip()})
        except ValueError as exc:
            raise LayerRangeError(f"bad layer spec '{spec}'") from exc
    else:
        layers = sorted({int(x) for x in spec})
    if not layers:
        raise LayerRangeError("layer range is empty")
    if layers[0] < 1 or layers[-1] > num_layers:
        raise LayerRangeError(f"layer range {layers} outside [1, {num_layers}]")
    return layers


# ---------------------------------------------------------------------------
# score heads and their input gradients

def _embedding_head_score(z_row: np.ndarray, bundle: ModelBundle, query: Query):
    """Score a single token row through final LN -> proj -> (normalize) -> dot.

    Returns (s, grad wrt the token row).
    """
    w = bundle.weights
    u = ops.layer_norm(z_row, w.ln_final_gain, w.ln_final_bias)
    e = u @ w.proj if w.proj is not None else u
    col = query.column
    if query.normalize_embedding:
        nrm = np.linalg.norm(e)
        ehat = e / nrm
        s = float(ehat @ col)
        g_e = (col - ehat * (ehat @ col)) / nrm
    else:
        s = float(e @ col)
        g_e = col.astype(e.dtype, copy=False)
    g_u = g_e @ w.proj.T if w.proj is not None else g_e
    g_z = ops.layer_norm_backward(z_row, w.ln_final_gain, g_u)
    return s, g_z


def _pooler_score(tokens: np.ndarray, bundle: ModelBundle, query: Query,
                  normalize: bool):
    """Pool tokens and dot with the query column; returns (s, pooled, A_pool)."""
    pooled, attn = pool_attn(tokens, bundle.weights.pooler, bundle.config.heads)
    col = query.column
    if normalize:
        s = float(pooled @ col / np.linalg.norm(pooled))
    else:
        s = float(pooled @ col)
    return s, pooled, attn


def _pooler_grad_wrt_attention(tokens: np.ndarray, bundle: ModelBundle, query: Query,
                               normalize: bool):
    """d(score)/d(A_pool) with A_pool a leaf (values fixed). Returns (grad, A_pool)."""
    w = bundle.weights.pooler
    heads = bundle.config.heads
    z = tokens
    if w.ln_gain is not None:
        z = ops.layer_norm(z, w.ln_gain, w.ln_bias)
    v = z @ w.value_weight.T
    if w.value_bias is not None:
        v = v + w.value_bias
    from .model import split_heads
    vh = split_heads(v, heads)                                 # [h, n, d_h]
    pooled, attn = pool_attn(tokens, bundle.weights.pooler, heads)
    col = query.column
    if normalize:
        nrm = np.linalg.norm(pooled)
        phat = pooled / nrm
        g_pooled = (col - phat * (phat @ col)) / nrm
    else:
        g_pooled = col.astype(pooled.dtype, copy=False)
    if w.out_weight is not None:
        g_concat = g_pooled @ w.out_weight
    else:
        g_concat = g_pooled
    gh = g_concat.reshape(heads, -1)                           # [h, d_h]
    grad = np.einsum("hnd,hd->hn", vh, gh)[:, None, :]         # [h, 1, n]
    return ops.check_finite(grad, "pooler attention gradient"), attn


@dataclass
class LayerScore:
    layer: int
    value: float


@dataclass
class AttnGradient:
    layer: int
    grad: np.ndarray  # [h, T, T], or [h, 1, n] for the pooler variant


@dataclass
class LayerExplanation:
    layer: int
    values: np.ndarray     # nonnegative, length T (CLS models) or n (pooler)
    includes_cls: bool


def _check_layer(trace: ForwardTrace, layer: int) -> None:
    if not 1 <= layer <= trace.num_layers:
        raise LayerRangeError(f"layer {layer} outside [1, {trace.num_layers}]")


def layer_score(trace: ForwardTrace, layer: int, query: Query,
                bundle: ModelBundle) -> LayerScore:
    """Query activation computed from the layer's intermediate tokens."""
    _check_layer(trace, layer)
    tokens = trace.tokens[layer]
    if bundle.config.pooling == "cls_token":
        s, _ = _embedding_head_score(tokens[0], bundle, query)
    else:
        s, _, attn = _pooler_score(tokens, bundle, query, normalize=False)
        trace.pooler_attention.setdefault(layer, attn)
    return LayerScore(layer=layer, value=s)


def grad_attention(trace: ForwardTrace, layer: int, query: Query,
                   bundle: ModelBundle, normalize: bool | None = None) -> AttnGradient:
    """Analytic gradient of the layer score w.r.t. the post-softmax attention map.

    The attention map is treated as an independent input: the backward path
    runs classifier dot -> embedding head -> layer-l MLP/LN/residual ->
    attention output projection -> per-head A @ V, and stops there. For
    pooler models the gradient is w.r.t. the pooler attention map instead,
    and `normalize` selects raw-dot (layerwise default) vs unit-normalized
    (prediction-head) scoring.
    """
    _check_layer(trace, layer)
    cfg, w = bundle.config, bundle.weights
    if cfg.pooling == "attn_pooler":
        norm = query.normalize_embedding if normalize is not None and normalize else False
        grad, attn = _pooler_grad_wrt_attention(trace.tokens[layer], bundle, query, norm)
        trace.pooler_attention.setdefault(layer, attn)
        return AttnGradient(layer=layer, grad=grad)

    blk = w.blocks[layer - 1]
    z_l = trace.tokens[layer]
    zhat = trace.residual_mid[layer - 1]
    pre = trace.mlp_preact[layer - 1]
    vh = trace.head_values[layer - 1]

    _, g_row0 = _embedding_head_score(z_l[0], bundle, query)
    g_zl = np.zeros_like(z_l)
    g_zl[0] = g_row0

    # Z^l = Zhat + gelu(pre) @ W2^T + b2, pre = LN2(Zhat) @ W1^T + b1
    g_act = g_zl @ blk.fc2_weight
    g_pre = g_act * ops.gelu_backward(pre)
    g_y = g_pre @ blk.fc1_weight
    g_zhat = g_zl + ops.layer_norm_backward(zhat, blk.ln2_gain, g_y)

    # Zhat = Z^{l-1} + merge_heads(A @ V) @ Wo^T + bo, with A the leaf
    g_merge = g_zhat @ blk.out_weight
    t = g_merge.shape[0]
    g_ho = np.ascontiguousarray(
        g_merge.reshape(t, cfg.heads, cfg.head_dim).transpose(1, 0, 2))
    grad = g_ho @ vh.transpose(0, 2, 1)                        # [h, T, T]
    return AttnGradient(layer=layer, grad=ops.check_finite(grad, "attention gradient"))


# ---------------------------------------------------------------------------
# finite-difference oracle

def fd_entries(score_fn, a0: np.ndarray, epsilon: float = 1e-4) -> np.ndarray:
    """Central differences of a scalar function over every entry of a0.

    Per-entry step: epsilon * max(1, |entry|).
    """
    grad = np.zeros_like(a0, dtype=np.float64)
    it = np.nditer(a0, flags=["multi_index"])
    for val in it:
        idx = it.multi_index
        eps = epsilon * max(1.0, abs(float(val)))
        plus = a0.copy()
        plus[idx] += eps
        minus = a0.copy()
        minus[idx] -= eps
        grad[idx] = (score_fn(plus) - score_fn(minus)) / (2.0 * eps)
    return grad


def fd_grad_attention(bundle: ModelBundle, z0: np.ndarray, layer: int, query: Query,
                      epsilon: float = 1e-4, normalize: bool | None = None) -> np.ndarray:
    """Numeric gradient of the layer score w.r.t. the post-softmax attention map.

    Perturbs each captured attention entry after the softmax, reruns the
    layer-local forward, and central-differences the score. Intended for
    f64 bundles; this is the oracle the analytic path is checked against.
    """
    cfg, w = bundle.config, bundle.weights
    trace = forward_trace(z0, w, cfg)
    _check_layer(trace, layer)

    if cfg.pooling == "attn_pooler":
        tokens = trace.tokens[layer]
        pw = w.pooler
        z = tokens
        if pw.ln_gain is not None:
            z = ops.layer_norm(z, pw.ln_gain, pw.ln_bias)
        v = z @ pw.value_weight.T
        if pw.value_bias is not None:
            v = v + pw.value_bias
        from .model import split_heads
        vh = split_heads(v, cfg.heads)
        _, a0 = _pooler_grad_wrt_attention(tokens, bundle, query, False)
        norm = bool(normalize) and query.normalize_embedding

        def score(a_mod):
            pooled = np.einsum("hqn,hnd->hd", a_mod, vh).reshape(-1)
            if pw.out_weight is not None:
                pooled = pooled @ pw.out_weight.T
                if pw.out_bias is not None:
                    pooled = pooled + pw.out_bias
            if norm:
                return float(pooled @ query.column / np.linalg.norm(pooled))
            return float(pooled @ query.column)

        return fd_entries(score, a0, epsilon)

    blk = w.blocks[layer - 1]
    z_prev = trace.tokens[layer - 1]
    x = ops.layer_norm(z_prev, blk.ln1_gain, blk.ln1_bias)
    a0 = trace.attention[layer - 1]
    vh = trace.head_values[layer - 1]
    heads, t = cfg.heads, z_prev.shape[0]

    def score(a_mod):
        ho = a_mod @ vh                                        # [h, T, d_h]
        merged = np.ascontiguousarray(ho.transpose(1, 0, 2)).reshape(t, -1)
        zhat = z_prev + merged @ blk.out_weight.T + blk.out_bias
        y = ops.layer_norm(zhat, blk.ln2_gain, blk.ln2_bias)
        z_l = zhat + ops.gelu(y @ blk.fc1_weight.T + blk.fc1_bias) @ blk.fc2_weight.T \
            + blk.fc2_bias
        s, _ = _embedding_head_score(z_l[0], bundle, query)
        return s

    del x  # LN1 output folded into the captured attention/value matrices
    return fd_entries(score, a0, epsilon)


# ---------------------------------------------------------------------------
# per-layer explanation and merging

def layer_explanation(g: AttnGradient) -> LayerExplanation:
    """ReLU the gradient, then average over heads and query rows."""
    grad = g.grad
    heads, rows, cols = grad.shape
    values = ops.relu(grad).sum(axis=(0, 1)) / (heads * rows)
    includes_cls = rows == cols  # self-attention map; pooler maps are [h, 1, n]
    return LayerExplanation(layer=g.layer, values=values, includes_cls=includes_cls)


def _patch_part(e: LayerExplanation) -> np.ndarray:
    return e.values[1:] if e.includes_cls else e.values


def finalize_single_layer(e: LayerExplanation, image_size: int) -> Heatmap:
    """Single-layer map: drop the CLS entry, reshape, upsample, normalize."""
    return finalize_patch_map(_patch_part(e), image_size,
                              method="legrad", layer_range=[e.layer])


def merge_layers(explanations: list[LayerExplanation], image_size: int) -> Heatmap:
    """Average per-layer maps (over the layers actually included), then finalize."""
    if not explanations:
        raise ValueError("no layer explanations to merge")
    stack = np.stack([_patch_part(e) for e in explanations])
    merged = np.mean(stack, axis=0)
    return finalize_patch_map(merged, image_size, method="legrad",
                              layer_range=[e.layer for e in explanations])


def legrad_from_trace(bundle: ModelBundle, trace: ForwardTrace, query: Query,
                      layer_range=None) -> Heatmap:
    layers = resolve_layer_spec(layer_range, trace.num_layers)
    exps = [layer_explanation(grad_attention(trace, l, query, bundle)) for l in layers]
    return merge_layers(exps, bundle.config.image_size)


def _trace_for_image(bundle: ModelBundle, image) -> ForwardTrace:
    if isinstance(image, np.ndarray) and image.ndim == 3 and \
            image.shape == (3, bundle.config.image_size, bundle.config.image_size):
        tensor = image
    else:
        tensor = preprocess(image, bundle.preprocessing, bundle.config.image_size)
    z0 = embed(tensor, bundle.weights, bundle.config, dtype=bundle.dtype)
    return forward_trace(z0, bundle.weights, bundle.config)


def legrad(bundle: ModelBundle, image, query: Query, layer_range=None) -> Heatmap:
    """Full pipeline: preprocess, forward with trace, per-layer gradients, merge."""
    return legrad_from_trace(bundle, _trace_for_image(bundle, image), query, layer_range)


# ---------------------------------------------------------------------------
# baselines

def baseline_raw_attention(trace: ForwardTrace, bundle: ModelBundle) -> Heatmap:
    """Head-mean of the final attention row for the CLS (or pooler) query."""
    cfg = bundle.config
    if cfg.pooling == "attn_pooler":
        _, attn = pool_attn(trace.tokens[-1], bundle.weights.pooler, cfg.heads)
        patch = attn[:, 0, :].mean(axis=0)
    else:
        patch = trace.attention[-1][:, 0, 1:].mean(axis=0)
    return finalize_patch_map(patch, cfg.image_size, method="raw_attention")


def rollout_matrix(attention_maps: list[np.ndarray]) -> np.ndarray:
    """Cumulative product of head-meaned, residual-augmented attention maps."""
    t = attention_maps[0].shape[-1] if attention_maps else 0
    if not attention_maps:
        raise ValueError("rollout needs at least one attention map")
    out = np.eye(t, dtype=attention_maps[0].dtype)
    for attn in attention_maps:
        mean = attn.mean(axis=0)
        aug = (mean + np.eye(t, dtype=mean.dtype)) / 2.0
        aug = aug / aug.sum(axis=-1, keepdims=True)
        out = aug @ out
    return out


def baseline_rollout(trace: ForwardTrace, bundle: ModelBundle) -> Heatmap:
    cfg = bundle.config
    r = rollout_matrix(trace.attention)
    if cfg.pooling == "attn_pooler":
        _, attn = pool_attn(trace.tokens[-1], bundle.weights.pooler, cfg.heads)
        patch = attn[:, 0, :].mean(axis=0) @ r
    else:
        patch = r[0, 1:]
    return finalize_patch_map(patch, cfg.image_size, method="rollout")


def _block_backward(g_out: np.ndarray, z_in: np.ndarray, blk, heads: int,
                    attn: np.ndarray, vh: np.ndarray, zhat: np.ndarray,
                    pre: np.ndarray) -> np.ndarray:
    """Full gradient through one pre-LN block (including softmax and Q/K paths)."""
    from .model import merge_heads, split_heads
    d = z_in.shape[1]
    dh = d // heads
    g_act = g_out @ blk.fc2_weight
    g_pre = g_act * ops.gelu_backward(pre)
    g_y = g_pre @ blk.fc1_weight
    g_zhat = g_out + ops.layer_norm_backward(zhat, blk.ln2_gain, g_y)

    g_merge = g_zhat @ blk.out_weight
    g_ho = split_heads(g_merge, heads)                         # [h, T, d_h]
    g_attn = g_ho @ vh.transpose(0, 2, 1)                      # [h, T, T]
    g_vh = attn.transpose(0, 2, 1) @ g_ho                      # [h, T, d_h]

    # recompute Q/K heads from the cached pre-LN input (bit-stable kernels)
    x = ops.layer_norm(z_in, blk.ln1_gain, blk.ln1_bias)
    qkv = x @ blk.qkv_weight.T + blk.qkv_bias
    qh = split_heads(qkv[:, :d], heads)
    kh = split_heads(qkv[:, d:2 * d], heads)

    g_scores = attn * (g_attn - (g_attn * attn).sum(axis=-1, keepdims=True))
    scale = 1.0 / math.sqrt(dh)
    g_qh = g_scores @ kh * scale
    g_kh = g_scores.transpose(0, 2, 1) @ qh * scale
    g_qkv = np.concatenate([merge_heads(g_qh), merge_heads(g_kh), merge_heads(g_vh)],
                           axis=1)
    g_x = g_qkv @ blk.qkv_weight
    return g_zhat + ops.layer_norm_backward(z_in, blk.ln1_gain, g_x)


def _pooler_backward_tokens(tokens: np.ndarray, bundle: ModelBundle, query: Query,
                            normalize: bool) -> np.ndarray:
    """d(prediction score)/d(tokens) through the attentional pooler."""
    from .model import merge_heads, split_heads
    w = bundle.weights.pooler
    heads = bundle.config.heads
    d = tokens.shape[1]
    dh = d // heads
    z = tokens
    if w.ln_gain is not None:
        z = ops.layer_norm(z, w.ln_gain, w.ln_bias)
    k = z @ w.key_weight.T + (w.key_bias if w.key_bias is not None else 0.0)
    v = z @ w.value_weight.T + (w.value_bias if w.value_bias is not None else 0.0)
    kh, vh = split_heads(k, heads), split_heads(v, heads)
    qh = w.query.reshape(heads, dh)
    pooled, attn = pool_attn(tokens, w, heads)

    col = query.column
    if normalize:
        nrm = np.linalg.norm(pooled)
        phat = pooled / nrm
        g_pooled = (col - phat * (phat @ col)) / nrm
    else:
        g_pooled = col.astype(pooled.dtype, copy=False)
    if w.out_weight is not None:
        g_concat = g_pooled @ w.out_weight
    else:
        g_concat = g_pooled
    gh = g_concat.reshape(heads, dh)

    a = attn[:, 0, :]                                          # [h, n]
    g_attn = np.einsum("hnd,hd->hn", vh, gh)
    g_vh = a[:, :, None] * gh[:, None, :]                      # [h, n, d_h]
    g_scores = a * (g_attn - (g_attn * a).sum(axis=-1, keepdims=True))
    g_kh = g_scores[:, :, None] * qh[:, None, :] / math.sqrt(dh)
    g_z = merge_heads(g_kh[:, :, :]) @ w.key_weight + merge_heads(g_vh) @ w.value_weight
    if w.ln_gain is not None:
        g_z = ops.layer_norm_backward(tokens, w.ln_gain, g_z)
    return ops.check_finite(g_z, "pooler token gradient")


def grad_tokens(trace: ForwardTrace, layer: int, query: Query,
                bundle: ModelBundle) -> np.ndarray:
    """Analytic d(final prediction score)/d(Z^layer) through blocks layer+1..L."""
    if not 0 <= layer <= trace.num_layers:
        raise LayerRangeError(f"layer {layer} outside [0, {trace.num_layers}]")
    cfg, w = bundle.config, bundle.weights
    z_final = trace.tokens[-1]
    if cfg.pooling == "cls_token":
        _, g_row0 = _embedding_head_score(z_final[0], bundle, query)
        g = np.zeros_like(z_final)
        g[0] = g_row0
    else:
        g = _pooler_backward_tokens(z_final, bundle, query,
                                    normalize=query.normalize_embedding)
    for j in range(trace.num_layers, layer, -1):
        g = _block_backward(g, trace.tokens[j - 1], w.blocks[j - 1], cfg.heads,
                            trace.attention[j - 1], trace.head_values[j - 1],
                            trace.residual_mid[j - 1], trace.mlp_preact[j - 1])
    return g


def default_gradcam_layer(num_layers: int) -> int:
    """ceil(2L/3): layer 8 on a 12-block model, clamped to [1, L]."""
    return min(max(1, math.ceil(2 * num_layers / 3)), num_layers)


def baseline_gradcam(trace: ForwardTrace, query: Query, bundle: ModelBundle,
                     layer: int | None = None) -> Heatmap:
    """Token-space class activation map at one layer.

    Token gradients of the final prediction score give channel weights
    (token-mean); the map is the ReLU'd weighted channel mean over patch
    tokens.
    """
    cfg = bundle.config
    layer = default_gradcam_layer(trace.num_layers) if layer is None else layer
    _check_layer(trace, layer)
    g = grad_tokens(trace, layer, query, bundle)               # [T, d]
    weights = g.mean(axis=0)                                   # [d]
    tokens = trace.tokens[layer]
    patch_tokens = tokens[1:] if cfg.pooling == "cls_token" else tokens
    emap = ops.relu((patch_tokens * weights).mean(axis=1))
    return finalize_patch_map(emap, cfg.image_size, method="gradcam",
                              layer_range=[layer])


def baseline_attentioncam(trace: ForwardTrace, query: Query,
                          bundle: ModelBundle) -> Heatmap:
    """Final attention map, head-weighted by its mean gradient."""
    cfg = bundle.config
    num_layers = trace.num_layers
    g = grad_attention(trace, num_layers, query, bundle, normalize=True)
    if cfg.pooling == "attn_pooler":
        attn = trace.pooler_attention[num_layers]
        w = g.grad.mean(axis=(1, 2))
        patch = (w[:, None] * attn[:, 0, :]).sum(axis=0)
    else:
        attn = trace.attention[-1]
        w = g.grad.mean(axis=(1, 2))
        patch = (w[:, None, None] * attn).sum(axis=0)[0, 1:]
    return finalize_patch_map(patch, cfg.image_size, method="attentioncam")


def prediction_score(bundle: ModelBundle, image, query: Query) -> float:
    """Final pooled-embedding score for the query column (Heatmap JSON `score`)."""
    from .model import classify, pool
    trace = _trace_for_image(bundle, image)
    pooled, _ = pool(trace, bundle)
    return float(classify(pooled, query.classifier)[query.class_index])


# ---------------------------------------------------------------------------
# dispatcher

def explain(bundle: ModelBundle, image, method: str, query: Query,
            layer_range=None, suppress_background: bool = False,
            empty_embedding: str = "empty_prompt") -> Heatmap:
    """Run any supported method on an image; optional empty-prompt suppression."""
    if method not in METHODS:
        raise ValueError(f"unknown method '{method}'; supported: {', '.join(METHODS)}")
    trace = _trace_for_image(bundle, image)

    def run(q: Query) -> Heatmap:
        if method == "legrad":
            return legrad_from_trace(bundle, trace, q, layer_range)
        if method == "raw_attention":
            return baseline_raw_attention(trace, bundle)
        if method == "rollout":
            return baseline_rollout(trace, bundle)
        if method == "gradcam":
            layer = None
            if layer_range is not None:
                layers = resolve_layer_spec(layer_range, trace.num_layers)
                layer = layers[-1] if len(layers) == 1 else None
            return baseline_gradcam(trace, q, bundle, layer=layer)
        return baseline_attentioncam(trace, q, bundle)

    result = run(query)
    if suppress_background:
        empty = resolve_query(bundle, embedding=empty_embedding)
        result = background_suppress(result, run(empty))
    return result
