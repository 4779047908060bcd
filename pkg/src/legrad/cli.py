"""Command-line front door.

Subcommands: explain, eval-seg, eval-points, eval-perturb, serve.

Exit codes are distinct by failure class: 2 bad arguments or inputs,
3 model load failure, 4 inference failure, 5 bind failure.
"""

from __future__ import annotations

import argparse
import json
import os
import socket
import sys

import numpy as np
from PIL import Image

from . import eval as evalmod
from . import explain as explainmod
from . import model
from .container import ContainerError
from .ops import NumericError

EXIT_OK = 0
EXIT_BAD_ARGS = 2
EXIT_MODEL_LOAD = 3
EXIT_INFERENCE = 4
EXIT_BIND = 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def resolve_model_path(spec: str) -> str:
    """Literal path first, then LEGRAD_MODEL_DIR/<name>[.lgtc]."""
    if os.path.isfile(spec):
        return spec
    model_dir = os.environ.get("LEGRAD_MODEL_DIR")
    if model_dir:
        for candidate in (os.path.join(model_dir, spec),
                          os.path.join(model_dir, spec + ".lgtc")):
            if os.path.isfile(candidate):
                return candidate
    raise CliError(f"model container not found: {spec}", EXIT_MODEL_LOAD)


def load_model(spec: str, precision: str | None) -> model.ModelBundle:
    path = resolve_model_path(spec)
    dtype = {"f32": np.float32, "f64": np.float64, None: None}[precision]
    try:
        return model.load_bundle(path, dtype=dtype)
    except (ContainerError, model.ModelError, OSError, ValueError) as exc:
        raise CliError(f"failed to load model '{path}': {exc}", EXIT_MODEL_LOAD)


def resolve_query_args(bundle, args) -> explainmod.Query:
    try:
        return explainmod.resolve_query(bundle, label=args.query,
                                        class_index=args.class_index,
                                        embedding=args.embedding)
    except explainmod.QueryError as exc:
        raise CliError(str(exc), EXIT_BAD_ARGS)


def _overlay_png(tensor: np.ndarray, values: np.ndarray,
                 preproc: model.Preprocessing, alpha: float = 0.6) -> Image.Image:
    """Red-tinted alpha blend of the heatmap over the de-normalized crop."""
    mean = np.asarray(preproc.mean, dtype=np.float64)[:, None, None]
    std = np.asarray(preproc.std, dtype=np.float64)[:, None, None]
    raw = np.clip(tensor * std + mean, 0.0, 1.0).transpose(1, 2, 0)
    tint = np.zeros_like(raw)
    tint[:, :, 0] = 1.0
    w = (alpha * values)[:, :, None]
    blended = (1.0 - w) * raw + w * tint
    return Image.fromarray((blended * 255.0 + 0.5).astype(np.uint8), mode="RGB")


def cmd_explain(args) -> int:
    bundle = load_model(args.model, args.precision)
    query = resolve_query_args(bundle, args)
    try:
        with Image.open(args.image) as img:
            tensor = model.preprocess(img, bundle.preprocessing,
                                      bundle.config.image_size)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read image '{args.image}': {exc}", EXIT_BAD_ARGS)

    try:
        layers = explainmod.resolve_layer_spec(args.layers, bundle.config.layers)
        heatmap = explainmod.explain(bundle, tensor, args.method, query,
                                     layer_range=layers,
                                     suppress_background=args.suppress_background)
        score = explainmod.prediction_score(bundle, tensor, query)
    except (NumericError, ArithmeticError) as exc:
        raise CliError(f"inference failed: {exc}", EXIT_INFERENCE)
    except (explainmod.LayerRangeError, explainmod.QueryError, ValueError) as exc:
        raise CliError(str(exc), EXIT_BAD_ARGS)

    prefix = args.out_prefix or os.path.splitext(os.path.basename(args.image))[0]
    heat_path = prefix + ".heatmap.png"
    overlay_path = prefix + ".overlay.png"
    json_path = prefix + ".json"
    with open(heat_path, "wb") as fh:
        fh.write(heatmap.to_png_bytes())
    _overlay_png(tensor, heatmap.values, bundle.preprocessing).save(
        overlay_path, format="PNG")
    payload = heatmap.to_json_dict()
    payload["score"] = score
    payload["query"] = {"label": query.classifier.labels[query.class_index],
                        "class_index": query.class_index}
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    print(f"wrote {heat_path} {overlay_path} {json_path} (score {score:.6f})")
    return EXIT_OK


def _cmd_eval(args, task: str) -> int:
    bundle = load_model(args.model, args.precision)
    if not os.path.isfile(args.manifest):
        raise CliError(f"manifest not found: {args.manifest}", EXIT_BAD_ARGS)
    kwargs = dict(task=task, method=args.method, layer_range=args.layers,
                  threshold=args.threshold, limit=args.limit, out_dir=args.out)
    if task == "perturb":
        kwargs.update(mode=args.mode, class_source=args.class_source,
                      auc_rule=args.auc_rule)
    try:
        report = evalmod.run_benchmark(bundle, args.manifest, **kwargs)
    except (NumericError, ArithmeticError) as exc:
        raise CliError(f"inference failed: {exc}", EXIT_INFERENCE)
    except evalmod.EvalError as exc:
        raise CliError(str(exc), EXIT_BAD_ARGS)
    agg = report["aggregate"]
    summary = " ".join(f"{k}={v:.4f}" for k, v in sorted(agg.items())
                       if isinstance(v, float))
    print(f"{task}: {report['num_samples']} samples, "
          f"{len(report['skipped'])} skipped; {summary}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from . import server
    try:
        app = server.create_app(model_dir=args.model_dir, paths=args.model or [])
    except server.NoModelsError as exc:
        raise CliError(str(exc), EXIT_MODEL_LOAD)
    if not app.state.models:
        raise CliError("no loadable model containers (use --model or "
                       "--model-dir)", EXIT_MODEL_LOAD)

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((args.host, args.port))
    except OSError as exc:
        raise CliError(f"cannot bind {args.host}:{args.port}: {exc}", EXIT_BIND)
    finally:
        probe.close()

    import uvicorn
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="legrad",
        description="Attention-gradient heatmaps for vision transformers: "
                    "explain single images, run benchmarks, serve the HTTP API.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model(p):
        p.add_argument("--model", required=True,
                       help="model container path, or a name looked up in "
                            "$LEGRAD_MODEL_DIR")
        p.add_argument("--precision", choices=["f32", "f64"], default=None,
                       help="override the container's stored precision")

    def add_method(p):
        p.add_argument("--method", choices=list(explainmod.METHODS),
                       default="legrad", help="explanation method")
        p.add_argument("--layers", default="last40%",
                       help='layer range: "last40%%", "all", or e.g. "3,7,12"')
        p.add_argument("--threshold", type=float, default=0.5,
                       help="binarization threshold (strictly greater)")

    p = sub.add_parser("explain", help="explain one image, write PNGs + JSON")
    add_model(p)
    add_method(p)
    p.add_argument("--image", required=True, help="input image path")
    q = p.add_mutually_exclusive_group(required=True)
    q.add_argument("--query", help="class label to explain")
    q.add_argument("--class-index", type=int, help="classifier column index")
    q.add_argument("--embedding", help="named extra embedding to explain")
    p.add_argument("--suppress-background", action="store_true",
                   help="zero pixels the empty prompt lights up")
    p.add_argument("--out-prefix", help="output file prefix "
                                        "(default: image basename)")
    p.set_defaults(func=cmd_explain)

    for task, helptext in (("seg", "binarized segmentation benchmark"),
                           ("points", "point-annotation localization benchmark"),
                           ("perturb", "pixel-erasure faithfulness benchmark")):
        p = sub.add_parser(f"eval-{task}", help=helptext)
        add_model(p)
        add_method(p)
        p.add_argument("--manifest", required=True,
                       help="JSON-lines dataset manifest")
        p.add_argument("--limit", type=int, default=None,
                       help="cap the number of samples")
        p.add_argument("--out", default=".",
                       help="directory for report.json / report.csv")
        p.add_argument("--workers", type=int, default=1,
                       help="evaluation parallelism (reports are "
                            "worker-count independent)")
        if task == "perturb":
            p.add_argument("--mode", choices=["positive", "negative"],
                           default="positive",
                           help="erase most (positive) or least (negative) "
                                "relevant pixels first")
            p.add_argument("--class-source", choices=["predicted", "target"],
                           default="predicted",
                           help="reference class for accuracy")
            p.add_argument("--auc-rule", choices=["mean", "trapezoid"],
                           default="mean", help="area rule over the curve")
        p.set_defaults(func=lambda a, t=task: _cmd_eval(a, t))

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--model", action="append",
                   help="model container path (repeatable)")
    p.add_argument("--model-dir", default=os.environ.get("LEGRAD_MODEL_DIR"),
                   help="directory of .lgtc containers "
                        "(default: $LEGRAD_MODEL_DIR)")
    p.add_argument("--host", default="127.0.0.1", help="bind address")
    p.add_argument("--port", type=int, default=8000, help="bind port")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except explainmod.QueryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGS


if __name__ == "__main__":
    sys.exit(main())
