"""Layer anatomy: where the explanation comes from.

The layerwise method builds one map per transformer block from the
gradient of the query score with respect to that block's post-softmax
attention, then averages maps over a layer range. This script takes the
machinery apart: per-layer query scores, per-layer maps, and how the
merged map shifts as the range grows.

Run:  python3 demos/03_layers.py
"""

from pathlib import Path

import numpy as np
from PIL import Image

from legrad import explain, model

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    bundle = model.load_bundle(ROOT / "fixtures" / "models" / "tiny_cls.lgtc")
    cfg = bundle.config
    with Image.open(ROOT / "fixtures" / "images" / "sample.png") as img:
        tensor = model.preprocess(img, bundle.preprocessing, cfg.image_size)
    query = explain.resolve_query(bundle, class_index=0)

    z0 = model.embed(tensor, bundle.weights, cfg)
    trace = model.forward_trace(z0, bundle.weights, cfg)

    # Intermediate query scores: the class score you would get if the
    # network stopped after layer l and pooled right there. The gradient
    # of this scalar is what each per-layer map is made of.
    print("per-layer query scores (embedding head applied to Z^l):")
    for layer in range(1, cfg.layers + 1):
        s = explain.layer_score(trace, layer, query, bundle)
        print(f"  layer {layer}: {s.value:+.6f}")

    print("\nper-layer maps (hottest patch, share of near-zero cells):")
    explanations = []
    for layer in range(1, cfg.layers + 1):
        g = explain.grad_attention(trace, layer, query, bundle)
        e = explain.layer_explanation(g)
        explanations.append(e)
        hm = explain.finalize_single_layer(e, cfg.image_size)
        hot = np.unravel_index(np.argmax(hm.patch_grid), hm.patch_grid.shape)
        dead = float(np.mean(hm.patch_grid < 0.05))
        print(f"  layer {layer}: hottest ({hot[0]},{hot[1]}), "
              f"{dead:.0%} of patches < 0.05")

    # Merging: the default range keeps the trailing 40% of blocks
    # (layers 2..3 here); "all" folds in the early, noisier layers too.
    for spec in (None, "all", "1"):
        layers = explain.resolve_layer_spec(spec, cfg.layers)
        hm = explain.merge_layers([explanations[l - 1] for l in layers],
                                  cfg.image_size)
        hot = np.unravel_index(np.argmax(hm.patch_grid), hm.patch_grid.shape)
        name = {None: "default"}.get(spec, spec)
        print(f"\nrange {name!s:8s} -> layers {hm.layer_range}, "
              f"hottest patch ({hot[0]},{hot[1]})")

    # Each map is the ReLU of the attention gradient, averaged over heads
    # and query rows, so it is nonnegative by construction.
    g = explain.grad_attention(trace, cfg.layers, query, bundle)
    e = explain.layer_explanation(g)
    print(f"\nlast-layer raw values: min {e.values.min():.3e} "
          f"(nonnegative by construction), max {e.values.max():.3e}")


if __name__ == "__main__":
    main()
