"""Explain one image, end to end.

Loads the checked-in tiny model, runs the full pipeline on the sample
image, and writes three artifacts next to this script (demos/out/):

    sample.heatmap.png   grayscale relevance map at input resolution
    sample.overlay.png   red-tinted blend over the preprocessed crop
    sample.json          the same payload the CLI and server emit

Run from anywhere:  python3 demos/01_explain.py
"""

import json
from pathlib import Path

import numpy as np
from PIL import Image

from legrad import explain, model

ROOT = Path(__file__).resolve().parents[1]
OUT = Path(__file__).resolve().parent / "out"


def overlay(tensor: np.ndarray, values: np.ndarray, alpha: float = 0.6) -> Image.Image:
    """Blend the heatmap over the image as a red tint, strongest where hot."""
    raw = np.clip(tensor, 0.0, 1.0).transpose(1, 2, 0)
    tint = np.zeros_like(raw)
    tint[:, :, 0] = 1.0
    w = (alpha * values)[:, :, None]
    blended = (1.0 - w) * raw + w * tint
    return Image.fromarray((blended * 255.0 + 0.5).astype(np.uint8), mode="RGB")


def main() -> None:
    OUT.mkdir(exist_ok=True)

    bundle = model.load_bundle(ROOT / "fixtures" / "models" / "tiny_cls.lgtc")
    cfg = bundle.config
    print(f"model: {cfg.layers} layers, {cfg.heads} heads, width {cfg.width}, "
          f"{cfg.image_size}x{cfg.image_size} input, {cfg.pooling} pooling")

    with Image.open(ROOT / "fixtures" / "images" / "sample.png") as img:
        tensor = model.preprocess(img, bundle.preprocessing, cfg.image_size)

    # Which class does the model think this is?
    scores = model.predict(bundle, tensor)
    ranked = np.argsort(-scores)
    print("class scores:")
    for idx in ranked:
        print(f"  {bundle.classifier.labels[idx]:12s} {scores[idx]:+.4f}")

    # Explain the top class. The default layer range is the trailing 40%
    # of the blocks, which for this 3-layer model means layers 2 and 3.
    query = explain.Query(bundle.classifier, int(ranked[0]))
    heatmap = explain.legrad(bundle, tensor, query)
    print(f"\nexplained '{bundle.classifier.labels[query.class_index]}' "
          f"using layers {heatmap.layer_range}")

    grid = heatmap.patch_grid
    hot = np.unravel_index(np.argmax(grid), grid.shape)
    print(f"patch grid {grid.shape[0]}x{grid.shape[1]}, "
          f"hottest patch (row {hot[0]}, col {hot[1]})")

    (OUT / "sample.heatmap.png").write_bytes(heatmap.to_png_bytes())
    overlay(tensor, heatmap.values).save(OUT / "sample.overlay.png")
    payload = heatmap.to_json_dict()
    payload["score"] = explain.prediction_score(bundle, tensor, query)
    (OUT / "sample.json").write_text(
        json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")
    print(f"\nwrote {OUT / 'sample.heatmap.png'}")
    print(f"wrote {OUT / 'sample.overlay.png'}")
    print(f"wrote {OUT / 'sample.json'}")

    # The same thing from the command line:
    #   legrad explain --model fixtures/models/tiny_cls.lgtc \
    #       --image fixtures/images/sample.png --query class_0
    print("\nCLI equivalent: legrad explain --model fixtures/models/tiny_cls.lgtc "
          "--image fixtures/images/sample.png --query "
          + bundle.classifier.labels[query.class_index])


if __name__ == "__main__":
    main()
