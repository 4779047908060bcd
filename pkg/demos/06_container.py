"""Anatomy of a .lgtc weight container.

Walks the raw bytes of a checked-in model file: fixed header, canonical
JSON header, 64-byte payload alignment, then shows the validation
errors the loader raises on corrupted input. docs/container.md is the
normative description of everything printed here.

Run:  python3 demos/06_container.py
"""

import json
import struct
from pathlib import Path

from legrad import container

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    path = ROOT / "fixtures" / "models" / "tiny_cls.lgtc"
    raw = path.read_bytes()
    print(f"{path.name}: {len(raw)} bytes")

    # fixed preamble: 4-byte magic, u32 version, u64 header length
    magic = raw[:4]
    version, header_len = struct.unpack_from("<IQ", raw, 4)
    payload_start = 16 + header_len
    print(f"magic {magic!r}, version {version}, header {header_len} bytes, "
          f"payload starts at {payload_start} "
          f"(64-aligned: {payload_start % 64 == 0})")

    header = json.loads(raw[16:16 + header_len])
    meta = header["metadata"]["model"]
    print(f"metadata.model: {json.dumps(meta, sort_keys=True)}")

    print(f"\n{len(header['entries'])} tensor entries (sorted by name):")
    print(f"  {'name':28s} {'dtype':8s} {'shape':14s} offset")
    for e in header["entries"][:6]:
        print(f"  {e['name']:28s} {e['dtype']:8s} "
              f"{str(e['shape']):14s} {e['byte_offset']}")
    print(f"  ... {len(header['entries']) - 6} more")

    offsets = [e["byte_offset"] for e in header["entries"]]
    print(f"\nevery offset 64-aligned: {all(o % 64 == 0 for o in offsets)}")
    names = [e["name"] for e in header["entries"]]
    print(f"entries sorted: {names == sorted(names)}")

    tensors, _ = container.load_container(path)
    w = tensors["patch_embed.weight"]
    print(f"\nloaded patch_embed.weight: shape {w.shape}, dtype {w.dtype}, "
          f"first value {w.ravel()[0]:+.6f}")

    # the loader refuses malformed files instead of guessing
    print("\ncorruption experiments:")
    experiments = [
        ("wrong magic", b"NOPE" + raw[4:]),
        ("future version", raw[:4] + struct.pack("<I", 99) + raw[8:]),
        ("truncated payload", raw[:-8]),
    ]
    for name, bad in experiments:
        try:
            container.read_container(bad)
        except container.ContainerError as exc:
            print(f"  {name}: ContainerError: {exc}")

    # round trip: write + reread is exact, including metadata
    blob = container.write_container(tensors, header["metadata"])
    print(f"\nrewrite of the loaded tensors is byte-identical: {blob == raw}")


if __name__ == "__main__":
    main()
