"""All five explanation methods, side by side.

Runs legrad plus the four baselines on the same image and model, prints
a small comparison table, and writes a montage strip per model so the
maps can be eyeballed in one glance.

The layerwise method aggregates gradients across several blocks; the
baselines each read a single signal (final attention row, attention
rollout, one-layer CAM, gradient-weighted attention). On a tiny random
model the absolute maps mean little, but the structural differences
between methods are already visible.

Run:  python3 demos/02_methods.py
"""

from pathlib import Path

import numpy as np
from PIL import Image

from legrad import METHODS, explain, model

ROOT = Path(__file__).resolve().parents[1]
OUT = Path(__file__).resolve().parent / "out"
SCALE = 8  # nearest-neighbor zoom so 16px maps are visible


def montage(heatmaps: dict, size: int) -> Image.Image:
    """Horizontal strip of zoomed grayscale maps with a label bar."""
    from PIL import ImageDraw

    tile = size * SCALE
    strip = Image.new("L", (tile * len(heatmaps), tile + 12), color=255)
    draw = ImageDraw.Draw(strip)
    for i, (name, hm) in enumerate(heatmaps.items()):
        gray = (np.clip(hm.values, 0, 1) * 255).astype(np.uint8)
        img = Image.fromarray(gray, mode="L").resize((tile, tile), Image.NEAREST)
        strip.paste(img, (i * tile, 12))
        draw.text((i * tile + 2, 1), name, fill=0)
    return strip


def run_model(name: str, path: Path) -> None:
    bundle = model.load_bundle(path)
    with Image.open(ROOT / "fixtures" / "images" / "sample.png") as img:
        tensor = model.preprocess(img, bundle.preprocessing,
                                  bundle.config.image_size)
    query = explain.resolve_query(bundle, class_index=0)

    print(f"\n{name}: pooling={bundle.config.pooling}, "
          f"layers={bundle.config.layers}")
    print(f"  {'method':14s} {'layers':10s} {'hottest':10s} mass>0.5")
    maps = {}
    for method in METHODS:
        hm = explain.explain(bundle, tensor, method, query)
        maps[method] = hm
        hot = np.unravel_index(np.argmax(hm.patch_grid), hm.patch_grid.shape)
        frac = float(np.mean(hm.values > 0.5))
        layers = ",".join(map(str, hm.layer_range)) or "-"
        print(f"  {method:14s} {layers:10s} ({hot[0]},{hot[1]})     {frac:.3f}")

    strip = montage(maps, bundle.config.image_size)
    out_path = OUT / f"methods_{name}.png"
    strip.save(out_path)
    print(f"  wrote {out_path}")


def main() -> None:
    OUT.mkdir(exist_ok=True)
    run_model("cls", ROOT / "fixtures" / "models" / "tiny_cls.lgtc")
    run_model("pooler", ROOT / "fixtures" / "models" / "tiny_pooler.lgtc")

    # Background suppression needs a model with stored text embeddings:
    # the empty-prompt map decides which pixels to zero out.
    bundle = model.load_bundle(ROOT / "fixtures" / "models" / "tiny_text.lgtc")
    with Image.open(ROOT / "fixtures" / "images" / "sample.png") as img:
        tensor = model.preprocess(img, bundle.preprocessing,
                                  bundle.config.image_size)
    query = explain.resolve_query(bundle, class_index=0)
    plain = explain.explain(bundle, tensor, "legrad", query)
    curbed = explain.explain(bundle, tensor, "legrad", query,
                             suppress_background=True)
    zeroed = float(np.mean((curbed.values == 0) & (plain.values > 0)))
    print(f"\ntext model, background suppression: method tag "
          f"'{curbed.method}', zeroed {zeroed:.1%} of the map")


if __name__ == "__main__":
    main()
