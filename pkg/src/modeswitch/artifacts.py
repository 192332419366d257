"""Versioned binary artifact container.

Layout::

    8 bytes   magic (identifies the artifact kind and version)
    4 bytes   little-endian uint32 header length H
    H bytes   UTF-8 JSON header (sorted keys), including an "arrays" table
    ...       raw little-endian array payloads, in table order

Every array entry in the table is ``{"name", "dtype", "shape"}``. The output is
a pure function of its inputs (no timestamps), so identical runs give
identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_DTYPES = {"f4": "<f4", "f8": "<f8", "i4": "<i4", "i8": "<i8", "u1": "u1", "i1": "i1"}


class ArtifactError(ValueError):
    pass


def _code(dtype) -> str:
    dt = np.dtype(dtype)
    code = dt.kind + str(dt.itemsize)
    if code not in _DTYPES:
        raise ArtifactError(f"unsupported dtype {dt}")
    return code


def write_artifact(path, magic: bytes, header: dict, arrays: dict) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    table = []
    payload = []
    for name, arr in arrays.items():
        a = np.asarray(arr)
        code = _code(a.dtype)
        table.append({"name": name, "dtype": code, "shape": list(a.shape)})
        payload.append(np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes())
    hdr = dict(header)
    hdr["arrays"] = table
    hb = json.dumps(hdr, sort_keys=True, separators=(",", ":")).encode("utf-8")
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", len(hb)))
        f.write(hb)
        for b in payload:
            f.write(b)


def read_artifact(path, magic: bytes) -> tuple[dict, dict]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"missing artifact {p}")
    data = p.read_bytes()
    if data[:8] != magic:
        raise ArtifactError(f"{p}: bad magic {data[:8]!r}, expected {magic!r}")
    (n,) = struct.unpack("<I", data[8:12])
    try:
        hdr = json.loads(data[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArtifactError(f"{p}: corrupt header ({e})") from None
    off = 12 + n
    arrays = {}
    for entry in hdr.get("arrays", []):
        dt = np.dtype(_DTYPES[entry["dtype"]])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dt.itemsize
        if off + nbytes > len(data):
            raise ArtifactError(f"{p}: truncated payload for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data, dtype=dt, count=count, offset=off).reshape(shape).copy()
        off += nbytes
    if off != len(data):
        raise ArtifactError(f"{p}: {len(data) - off} trailing bytes")
    return hdr, arrays
