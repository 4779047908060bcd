"""Layerwise attention-gradient explainability for vision transformers.

Quick start:

    from legrad import fixtures, explain
    bundle = fixtures.make_tiny_vit(layers=2, heads=2, width=16, seed=7)
    query = explain.Query(bundle.classifier, 0)
    heatmap = explain.legrad(bundle, fixtures.random_image_tensor(bundle), query)

Real checkpoints are converted into `.lgtc` containers by the separate
exporter package and loaded with `model.load_bundle`.
"""

from .container import (ContainerError, load_container, read_container,
                        save_container, write_container)
from .eval import (PerturbationCurve, auc, average_precision, binarize,
                   perturb_curve, point_iou, run_benchmark, seg_metrics)
from .explain import (METHODS, Query, baseline_attentioncam, baseline_gradcam,
                      baseline_raw_attention, baseline_rollout, grad_attention,
                      layer_explanation, layer_score, legrad, merge_layers,
                      resolve_query)
from .heatmap import Heatmap, background_suppress, finalize_patch_map
from .model import (Classifier, ForwardTrace, ModelBundle, Preprocessing,
                    ViTConfig, ViTWeights, forward_trace, load_bundle,
                    predict, preprocess, save_bundle)

__version__ = "0.1.0"

__all__ = [
    "ContainerError", "load_container", "read_container", "save_container",
    "write_container", "PerturbationCurve", "auc", "average_precision",
    "binarize", "perturb_curve", "point_iou", "run_benchmark", "seg_metrics",
    "METHODS", "Query", "baseline_attentioncam", "baseline_gradcam",
    "baseline_raw_attention", "baseline_rollout", "grad_attention",
    "layer_explanation", "layer_score", "legrad", "merge_layers",
    "resolve_query", "Heatmap", "background_suppress", "finalize_patch_map",
    "Classifier", "ForwardTrace", "ModelBundle", "Preprocessing", "ViTConfig",
    "ViTWeights", "forward_trace", "load_bundle", "predict", "preprocess",
    "save_bundle",
]
