"""Benchmark protocols: binarized segmentation, point localization,
perturbation faithfulness.

Dataset manifests are JSON lines, one object per sample:

    {"image": "img/0.png", "mask": "msk/0.png", "label": "cat"}
    {"image": "img/1.png", "points": {"cat": {"pos": [[x, y], ...],
                                              "neg": [[x, y], ...]}},
     "labels": ["cat"]}

All paths are relative to the manifest's directory. Reports are written as
`report.json` and `report.csv`; reruns are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import explain, model

FRACTIONS = tuple(round(0.1 * i, 1) for i in range(10))


class EvalError(ValueError):
    """Bad manifest, bad sample, or a metric precondition violation."""


# ---------------------------------------------------------------------------
# metrics

def binarize(values: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Strictly-greater thresholding; a value equal to the threshold is 0."""
    values = np.asarray(values)
    if values.min() < 0.0 or values.max() > 1.0:
        raise EvalError("heatmap values must lie in [0, 1] before binarizing")
    return values > threshold


def _as_bool_mask(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype != np.bool_:
        mask = mask > 0
    return mask


def seg_metrics(pred_mask, gt_mask) -> dict:
    """Pixel accuracy plus mean of foreground and background IoU.

    Empty-vs-empty counts as IoU 1.0 on that side (0/0 convention).
    """
    pred = _as_bool_mask(pred_mask)
    gt = _as_bool_mask(gt_mask)
    if pred.shape != gt.shape:
        raise EvalError(f"mask shapes differ: {pred.shape} vs {gt.shape}")

    def iou(a, b):
        union = np.logical_or(a, b).sum()
        if union == 0:
            return 1.0
        return float(np.logical_and(a, b).sum() / union)

    fg = iou(pred, gt)
    bg = iou(~pred, ~gt)
    return {
        "pixel_acc": float((pred == gt).mean()),
        "fg_iou": fg,
        "bg_iou": bg,
        "miou": (fg + bg) / 2.0,
    }


def average_precision(scores, gt_mask) -> float:
    """AP over the pixel ranking of the continuous heatmap.

    Pixels are sorted by score descending; ties resolve in row-major order
    (stable sort), which keeps the metric deterministic.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    gt = _as_bool_mask(gt_mask).ravel()
    if scores.shape != gt.shape:
        raise EvalError("score and mask sizes differ")
    total_pos = int(gt.sum())
    if total_pos == 0:
        return 1.0 if scores.max(initial=0.0) == 0.0 else 0.0
    order = np.argsort(-scores, kind="stable")
    hits = gt[order]
    cum_hits = np.cumsum(hits)
    ranks = np.arange(1, scores.size + 1)
    precisions = cum_hits[hits] / ranks[hits]
    return float(precisions.sum() / total_pos)


def point_iou(pred_mask, positives, negatives) -> float:
    """IoU over annotation points: TP/(TP+FP+FN).

    TP: positive points inside the mask. FP: negative points inside.
    FN: positive points outside.
    """
    pred = _as_bool_mask(pred_mask)
    positives = list(positives)
    negatives = list(negatives or [])
    if not positives:
        raise EvalError("point_iou needs at least one positive point")

    def inside(pt):
        x, y = int(pt[0]), int(pt[1])
        if not (0 <= y < pred.shape[0] and 0 <= x < pred.shape[1]):
            raise EvalError(f"point {pt} outside mask bounds {pred.shape}")
        return bool(pred[y, x])

    tp = sum(inside(p) for p in positives)
    fn = len(positives) - tp
    fp = sum(inside(p) for p in negatives)
    denom = tp + fp + fn
    return float(tp / denom) if denom else 1.0


@dataclass
class PerturbationCurve:
    fractions: tuple
    accuracies: list
    mode: str
    class_source: str

    def to_json_dict(self) -> dict:
        return {"fractions": list(self.fractions), "accuracies": list(self.accuracies),
                "mode": self.mode, "class_source": self.class_source}


def rank_pixels(values: np.ndarray, mode: str) -> np.ndarray:
    """Flat pixel order for erasure. Ties always resolve row-major."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    if mode == "positive":
        return np.argsort(-flat, kind="stable")
    if mode == "negative":
        return np.argsort(flat, kind="stable")
    raise EvalError(f"unknown perturbation mode '{mode}'")


def perturb_curve(bundle: model.ModelBundle, image_tensor: np.ndarray,
                  heatmap_values: np.ndarray, mode: str,
                  class_source: str = "predicted",
                  target_index: int | None = None) -> PerturbationCurve:
    """Erase ranked pixels of the normalized input and re-classify.

    Erased pixels are set to 0 in normalized space, which is the dataset
    mean color in raw space. `class_source` picks the reference label:
    the unperturbed argmax ("predicted") or a given index ("target").
    """
    if class_source not in ("predicted", "target"):
        raise EvalError(f"unknown class_source '{class_source}'")
    s = bundle.config.image_size
    tensor = np.asarray(image_tensor, dtype=bundle.dtype)
    if tensor.shape != (3, s, s):
        raise EvalError(f"expected image tensor [3, {s}, {s}], got {tensor.shape}")
    values = np.asarray(heatmap_values)
    if values.shape != (s, s):
        raise EvalError(f"heatmap must be at image resolution ({s}, {s})")

    if class_source == "target":
        if target_index is None:
            raise EvalError("class_source 'target' needs target_index")
        reference = int(target_index)
    else:
        reference = int(np.argmax(model.predict(bundle, tensor)))

    order = rank_pixels(values, mode)
    total = s * s
    accuracies = []
    for frac in FRACTIONS:
        k = int(frac * total)
        perturbed = tensor.copy().reshape(3, total)
        perturbed[:, order[:k]] = 0.0
        scores = model.predict(bundle, perturbed.reshape(3, s, s))
        accuracies.append(1.0 if int(np.argmax(scores)) == reference else 0.0)
    return PerturbationCurve(fractions=FRACTIONS, accuracies=accuracies,
                             mode=mode, class_source=class_source)


def auc(curve, rule: str = "mean") -> float:
    """Area under the accuracy curve over erasure fractions 0..0.9.

    Default is the rectangle/mean rule; "trapezoid" is available and
    differs by under a point on typical curves.
    """
    acc = np.asarray(curve.accuracies if isinstance(curve, PerturbationCurve)
                     else curve, dtype=np.float64)
    if rule == "mean":
        return float(acc.mean())
    if rule == "trapezoid":
        return float(np.trapezoid(acc, dx=0.1) / 0.9)
    raise EvalError(f"unknown AUC rule '{rule}'")


# ---------------------------------------------------------------------------
# dataset ingestion

@dataclass
class Sample:
    index: int
    image_path: str
    mask_path: str | None = None
    points: dict = field(default_factory=dict)
    labels: list = field(default_factory=list)


def load_manifest(path: str) -> list[Sample]:
    base = os.path.dirname(os.path.abspath(path))
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvalError(f"manifest line {i + 1}: bad JSON: {exc}") from exc
            if "image" not in obj:
                raise EvalError(f"manifest line {i + 1}: missing 'image'")
            labels = obj.get("labels") or ([obj["label"]] if "label" in obj else [])
            samples.append(Sample(
                index=len(samples),
                image_path=os.path.join(base, obj["image"]),
                mask_path=os.path.join(base, obj["mask"]) if "mask" in obj else None,
                points=obj.get("points", {}),
                labels=labels,
            ))
    if not samples:
        raise EvalError("no samples in manifest")
    return samples


def load_mask(path: str, image_size: int) -> np.ndarray:
    """Ground-truth mask, nearest-neighbor resized to the model input size."""
    with Image.open(path) as img:
        gray = img.convert("L")
        resized = gray.resize((image_size, image_size), Image.NEAREST)
        return np.asarray(resized) > 0


def map_point(x: float, y: float, orig_w: int, orig_h: int,
              image_size: int) -> tuple[int, int] | None:
    """Send original-image pixel coordinates through resize + center crop.

    Returns None when the point lands outside the crop.
    """
    scale = image_size / min(orig_w, orig_h)
    new_w, new_h = round(orig_w * scale), round(orig_h * scale)
    left, top = (new_w - image_size) // 2, (new_h - image_size) // 2
    px = int(x * scale) - left
    py = int(y * scale) - top
    if 0 <= px < image_size and 0 <= py < image_size:
        return px, py
    return None


# ---------------------------------------------------------------------------
# benchmark driver

def _resolve_sample_query(bundle, label):
    try:
        return explain.resolve_query(bundle, label=label)
    except explain.QueryError:
        return None


def _heatmap_for(bundle, tensor, method, query, layer_range):
    return explain.explain(bundle, tensor, method, query, layer_range=layer_range)


def run_benchmark(bundle: model.ModelBundle, manifest_path: str, task: str,
                  method: str = "legrad", layer_range=None, threshold: float = 0.5,
                  mode: str = "positive", class_source: str = "predicted",
                  auc_rule: str = "mean", limit: int | None = None,
                  out_dir: str | None = None) -> dict:
    """Evaluate one method over a manifest; optionally write report files.

    Samples that cannot be processed are recorded under "skipped" with a
    reason and excluded from aggregates, never silently dropped.
    """
    if task not in ("seg", "points", "perturb"):
        raise EvalError(f"unknown task '{task}'")
    samples = load_manifest(manifest_path)
    if limit is not None:
        samples = samples[:limit]
    s = bundle.config.image_size

    per_image = []
    skipped = []
    for sample in samples:
        try:
            record = _eval_one(bundle, sample, task, method, layer_range,
                               threshold, mode, class_source, auc_rule, s)
        except Exception as exc:  # noqa: BLE001 - reason goes in the report
            skipped.append({"index": sample.index, "image": sample.image_path,
                            "reason": f"{type(exc).__name__}: {exc}"})
            continue
        per_image.append(record)

    if not per_image:
        raise EvalError("every sample was skipped; nothing to aggregate")

    aggregate = _aggregate(per_image, task, auc_rule)
    report = {
        "task": task,
        "method": method,
        "params": {
            "layer_range": layer_range, "threshold": threshold,
            "mode": mode if task == "perturb" else None,
            "class_source": class_source if task == "perturb" else None,
            "auc_rule": auc_rule if task == "perturb" else None,
            "limit": limit,
        },
        "num_samples": len(per_image),
        "aggregate": aggregate,
        "per_image": per_image,
        "skipped": skipped,
    }
    if out_dir is not None:
        write_reports(report, out_dir)
    return report


def _eval_one(bundle, sample, task, method, layer_range, threshold, mode,
              class_source, auc_rule, image_size):
    if task == "points":
        return _eval_points(bundle, sample, method, layer_range, threshold,
                            image_size)
    with Image.open(sample.image_path) as img:
        tensor = model.preprocess(img, bundle.preprocessing, image_size)

    label = sample.labels[0] if sample.labels else None
    if label is not None:
        query = _resolve_sample_query(bundle, label)
        if query is None:
            raise EvalError(f"label '{label}' not in classifier vocabulary")
    else:
        # no annotation: explain whatever the model predicts
        predicted = int(np.argmax(model.predict(bundle, tensor)))
        query = explain.Query(bundle.classifier, predicted)

    heatmap = _heatmap_for(bundle, tensor, method, query, layer_range)

    if task == "seg":
        if sample.mask_path is None:
            raise EvalError("sample has no mask")
        gt = load_mask(sample.mask_path, image_size)
        pred = binarize(heatmap.values, threshold)
        rec = seg_metrics(pred, gt)
        rec["ap"] = average_precision(heatmap.values, gt)
        rec["index"] = sample.index
        rec["image"] = os.path.basename(sample.image_path)
        return rec

    target_index = query.class_index if class_source == "target" else None
    curve = perturb_curve(bundle, tensor, heatmap.values, mode,
                          class_source=class_source, target_index=target_index)
    return {"index": sample.index, "image": os.path.basename(sample.image_path),
            "accuracies": curve.accuracies, "auc": auc(curve, auc_rule)}


def _eval_points(bundle, sample, method, layer_range, threshold, image_size):
    if not sample.points:
        raise EvalError("sample has no point annotations")
    with Image.open(sample.image_path) as img:
        orig_w, orig_h = img.size
        tensor = model.preprocess(img, bundle.preprocessing, image_size)

    per_class = {}
    for cls in sorted(sample.points):
        ann = sample.points[cls]
        query = _resolve_sample_query(bundle, cls)
        if query is None:
            raise EvalError(f"class '{cls}' not in classifier vocabulary")
        mapped_pos = [p for p in (map_point(x, y, orig_w, orig_h, image_size)
                                  for x, y in ann.get("pos", [])) if p]
        mapped_neg = [p for p in (map_point(x, y, orig_w, orig_h, image_size)
                                  for x, y in ann.get("neg", [])) if p]
        if not mapped_pos:
            raise EvalError(f"class '{cls}': no positive points after cropping")
        heatmap = _heatmap_for(bundle, tensor, method, query, layer_range)
        pred = binarize(heatmap.values, threshold)
        per_class[cls] = point_iou(pred, mapped_pos, mapped_neg)

    return {"index": sample.index, "image": os.path.basename(sample.image_path),
            "per_class": per_class,
            "point_iou": float(np.mean(list(per_class.values())))}


def _aggregate(per_image, task, auc_rule):
    if task == "seg":
        keys = ("pixel_acc", "miou", "ap")
        return {k: float(np.mean([r[k] for r in per_image])) for k in keys}
    if task == "points":
        return {"p_miou": float(np.mean([r["point_iou"] for r in per_image]))}
    acc = np.array([r["accuracies"] for r in per_image], dtype=np.float64)
    mean_curve = acc.mean(axis=0).tolist()
    return {"accuracies": mean_curve, "auc": auc(mean_curve, auc_rule),
            "mean_per_image_auc": float(np.mean([r["auc"] for r in per_image]))}


def write_reports(report: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8",
              newline="") as fh:
        _write_csv(report, fh)


def _write_csv(report: dict, fh) -> None:
    rows = report["per_image"]
    task = report["task"]
    if task == "seg":
        fields = ["index", "image", "pixel_acc", "fg_iou", "bg_iou", "miou", "ap"]
    elif task == "points":
        fields = ["index", "image", "point_iou"]
    else:
        fields = ["index", "image", "auc"] + [f"acc_{f}" for f in FRACTIONS]
    writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        flat = dict(row)
        if task == "perturb":
            for f, a in zip(FRACTIONS, row["accuracies"]):
                flat[f"acc_{f}"] = a
        writer.writerow(flat)


def format_curve_text(curve: PerturbationCurve, auc_value: float) -> str:
    cells = " ".join(f"{f:.1f}:{a:.2f}" for f, a in
                     zip(curve.fractions, curve.accuracies))
    return f"[{curve.mode}/{curve.class_source}] {cells} auc={auc_value:.4f}"
