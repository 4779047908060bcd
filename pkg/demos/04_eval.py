"""Benchmark harness walkthrough on a synthetic three-sample dataset.

Builds a tiny dataset under demos/out/bench (seeded images, simple
ground-truth masks, one point-annotated sample), then runs the three
evaluation tasks:

    seg      binarized heatmap vs mask: pixel accuracy, mIoU, AP
    points   pos/neg click agreement after resize+crop mapping
    perturb  erase top-ranked pixels, watch the prediction flip

Samples a task cannot use are reported as skipped with a reason, never
silently dropped. Reports rerun byte-identically.

Run:  python3 demos/04_eval.py
"""

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image

from legrad import eval as evalmod
from legrad import model
from legrad.fixtures import stream

ROOT = Path(__file__).resolve().parents[1]
OUT = Path(__file__).resolve().parent / "out"


def build_dataset(base: Path) -> Path:
    (base / "img").mkdir(parents=True, exist_ok=True)
    (base / "msk").mkdir(exist_ok=True)
    for i in range(3):
        arr = stream(100 + i, "demo.image").uniform(0, 255, (16, 16, 3))
        Image.fromarray(arr.astype(np.uint8), "RGB").save(base / "img" / f"{i}.png")

    # masks: a centered square and a left half
    m0 = np.zeros((16, 16), dtype=np.uint8)
    m0[4:12, 4:12] = 255
    Image.fromarray(m0, "L").save(base / "msk" / "0.png")
    m1 = np.zeros((16, 16), dtype=np.uint8)
    m1[:, :8] = 255
    Image.fromarray(m1, "L").save(base / "msk" / "1.png")

    lines = [
        {"image": "img/0.png", "mask": "msk/0.png", "label": "class_0"},
        {"image": "img/1.png", "mask": "msk/1.png", "label": "class_1"},
        {"image": "img/2.png", "label": "class_1",
         "points": {"class_1": {"pos": [[4, 4], [10, 8]], "neg": [[15, 15]]}}},
    ]
    manifest = base / "manifest.jsonl"
    manifest.write_text("".join(json.dumps(l) + "\n" for l in lines))
    return manifest


def show(tag: str, report: dict) -> None:
    agg = ", ".join(f"{k}={v:.4f}" for k, v in sorted(report["aggregate"].items())
                    if isinstance(v, float))
    print(f"  {tag:22s} {report['num_samples']} ok, "
          f"{len(report['skipped'])} skipped: {agg}")
    for skip in report["skipped"]:
        print(f"    skipped {skip['image']}: {skip['reason']}")


def main() -> None:
    manifest = build_dataset(OUT / "bench")
    bundle = model.load_bundle(ROOT / "fixtures" / "models" / "tiny_cls.lgtc")
    print(f"dataset: {manifest}")

    print("\nsegmentation (only the two masked samples qualify):")
    for method in ("legrad", "raw_attention"):
        show(method, evalmod.run_benchmark(bundle, str(manifest), "seg",
                                           method=method))

    print("\npointing game (only the annotated sample qualifies):")
    show("legrad", evalmod.run_benchmark(bundle, str(manifest), "points"))

    print("\nperturbation (positive = erase hottest first, accuracy should "
          "fall fastest\nfor a faithful map; negative erases coldest first):")
    for mode in ("positive", "negative"):
        show(f"legrad/{mode}", evalmod.run_benchmark(bundle, str(manifest),
                                                     "perturb", mode=mode))

    # determinism check: two runs write byte-identical reports
    digests = []
    for run in ("a", "b"):
        out_dir = OUT / "bench" / f"report_{run}"
        evalmod.run_benchmark(bundle, str(manifest), "seg",
                              out_dir=str(out_dir))
        digests.append(hashlib.sha256(
            (out_dir / "report.json").read_bytes()).hexdigest())
    same = "byte-identical" if digests[0] == digests[1] else "DIFFER"
    print(f"\nrepeated seg report.json: {same} (sha256 {digests[0][:16]}...)")

    print("\nCLI equivalent: legrad eval-seg --model fixtures/models/tiny_cls.lgtc "
          f"--manifest {manifest.relative_to(ROOT)} --out report_dir")


if __name__ == "__main__":
    main()
