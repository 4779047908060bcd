"""vit-export command line: `export --model <id> --out <path> [--labels file]`.

Model ids: `tiny-random` (seeded fixture generator) or
`open_clip:<arch>/<pretrained>` for real checkpoints.
"""

from __future__ import annotations

import argparse
import sys

from . import convert


def _read_labels(path: str | None):
    if path is None:
        return None
    with open(path) as fh:
        labels = [line.strip() for line in fh if line.strip()]
    if not labels:
        raise SystemExit("labels file is empty")
    return labels


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vit-export")
    sub = parser.add_subparsers(dest="command", required=True)
    exp = sub.add_parser("export", help="write a model container (plus the "
                                        "parity fixture for tiny-random)")
    exp.add_argument("--model", required=True,
                     help="'tiny-random' or 'open_clip:<arch>/<pretrained>'")
    exp.add_argument("--out", required=True,
                     help="output directory (tiny-random) or container path")
    exp.add_argument("--labels", default=None,
                     help="file with one class label per line")
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--pooling", choices=["cls_token", "attn_pooler"],
                     default="cls_token")
    args = parser.parse_args(argv)

    labels = _read_labels(args.labels)
    try:
        if args.model == "tiny-random":
            paths = convert.export_tiny(args.out, seed=args.seed,
                                        pooling=args.pooling, labels=labels)
            for kind, path in paths.items():
                print(f"wrote {kind}: {path}")
            return 0
        if args.model.startswith("open_clip:"):
            spec = args.model[len("open_clip:"):]
            arch, _, pretrained = spec.partition("/")
            if not pretrained:
                print("error: expected open_clip:<arch>/<pretrained>",
                      file=sys.stderr)
                return 2
            path = convert.export_checkpoint(arch, pretrained, args.out,
                                             labels=labels)
            print(f"wrote {path}")
            return 0
        print(f"error: unknown model id '{args.model}'", file=sys.stderr)
        return 2
    except convert.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (convert.SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
