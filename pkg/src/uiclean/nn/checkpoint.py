"""Parameter checkpoints: a flat binary container of named float32 records
described by a JSON manifest, behind a versioned header.

Layout: 8-byte magic ``UICKPT01``, 4-byte little-endian manifest length,
UTF-8 JSON manifest, then the raw float32 payload. The manifest records
each parameter's name, shape, and byte offset into the payload, plus an
arbitrary ``meta`` dict for model configuration.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"UICKPT01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    records = []
    payload = bytearray()
    for name in sorted(arrays):
        data = np.ascontiguousarray(arrays[name], dtype=np.float32)
        records.append(
            {
                "name": name,
                "shape": list(data.shape),
                "dtype": "float32",
                "offset": len(payload),
                "nbytes": data.nbytes,
            }
        )
        payload.extend(data.tobytes())
    manifest = json.dumps(
        {"version": FORMAT_VERSION, "records": records, "meta": meta or {}}
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        fh.write(bytes(payload))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (manifest_len,) = struct.unpack("<I", raw[len(MAGIC) : len(MAGIC) + 4])
    manifest_start = len(MAGIC) + 4
    manifest = json.loads(raw[manifest_start : manifest_start + manifest_len].decode("utf-8"))
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    payload = raw[manifest_start + manifest_len :]
    arrays: dict[str, np.ndarray] = {}
    for record in manifest["records"]:
        start, nbytes = record["offset"], record["nbytes"]
        flat = np.frombuffer(payload[start : start + nbytes], dtype=np.float32)
        arrays[record["name"]] = flat.reshape(record["shape"]).astype(np.float64)
    return arrays, manifest.get("meta", {})
