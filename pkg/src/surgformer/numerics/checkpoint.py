"""Binary key->array checkpoint format.

Layout::

    SURGFORMER-CKPT <version>\\n
    <one line of JSON: [{"name": ..., "shape": [...]}, ...] in key order>\\n
    <raw little-endian float64 payloads, concatenated in the same order>

Key order is preserved and no timestamps are written, so save -> load -> save
reproduces the file byte for byte.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"SURGFORMER-CKPT"
FORMAT_VERSION = 1


def dumps(arrays) -> bytes:
    index = []
    payload = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        index.append({"name": name, "shape": list(a.shape)})
        payload.append(a.tobytes())
    header = MAGIC + f" {FORMAT_VERSION}\n".encode()
    header += json.dumps(index, separators=(",", ":")).encode() + b"\n"
    return header + b"".join(payload)


def loads(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    first, sep, rest = blob.partition(b"\n")
    parts = first.split(b" ")
    if not sep or len(parts) != 2 or parts[0] != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    if int(parts[1]) != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {parts[1].decode()}")
    line, sep, body = rest.partition(b"\n")
    if not sep:
        raise DataError("truncated checkpoint header")
    out = OrderedDict()
    offset = 0
    for entry in json.loads(line):
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        nbytes = 8 * n
        chunk = body[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise DataError(f"truncated payload for {entry['name']}")
        out[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(body):
        raise DataError("trailing bytes after checkpoint payload")
    return out


def save(path, arrays) -> None:
    Path(path).write_bytes(dumps(arrays))


def load(path) -> "OrderedDict[str, np.ndarray]":
    return loads(Path(path).read_bytes())
