"""Single-file parameter checkpoints.

Byte layout (all integers little-endian)::

    offset  size  content
    0       8     magic  b"MQACKPT\\x00"
    8       4     uint32 format version (currently 1)
    12      8     uint64 header length H
    20      H     UTF-8 JSON header, keys sorted:
                    {"hyperparams": {...},
                     "params": [{"name": str, "shape": [int, ...]}, ...]}
    20+H    ...   parameter payloads in header order, each the C-order
                  little-endian float64 values of that parameter

The header is written with sorted keys and fixed separators so identical
inputs always produce identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from mqa.errors import ParseError

MAGIC = b"MQACKPT\x00"
VERSION = 1


def dump_bytes(params: dict[str, np.ndarray], hyperparams: dict) -> bytes:
    entries = [{"name": name, "shape": list(np.shape(value))} for name, value in params.items()]
    header = json.dumps(
        {"hyperparams": hyperparams, "params": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    chunks = [MAGIC, struct.pack("<IQ", VERSION, len(header)), header]
    for value in params.values():
        chunks.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(chunks)


def load_bytes(blob: bytes, source="<bytes>") -> tuple[dict[str, np.ndarray], dict]:
    if blob[:8] != MAGIC:
        raise ParseError("not a checkpoint file (bad magic)", source)
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", source)
    header = json.loads(blob[20 : 20 + hlen].decode("utf-8"))
    offset = 20 + hlen
    params: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(blob):
            raise ParseError(f"truncated payload for {entry['name']}", source)
        params[entry["name"]] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(blob):
        raise ParseError("trailing bytes after last parameter", source)
    return params, header["hyperparams"]


def save_checkpoint(path, params: dict[str, np.ndarray], hyperparams: dict) -> Path:
    path = Path(path)
    path.write_bytes(dump_bytes(params, hyperparams))
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    return load_bytes(path.read_bytes(), path)
