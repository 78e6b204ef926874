"""Versioned binary container: magic, JSON header, then raw little-endian arrays.

Layout::

    b"CPHNBNDL"            8 bytes
    format version         uint32 LE
    header length          uint64 LE
    header                 UTF-8 JSON {"kind", "meta", "arrays": [{"name", "dtype", "shape"}]}
    array payloads         concatenated in header order, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CPHNBNDL"
VERSION = 1


class BundleError(ValueError):
    pass


def write_bundle(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> Path:
    specs, blobs = [], []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        arr = arr.astype(dtype, copy=False)
        specs.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"kind": kind, "meta": meta, "arrays": specs}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    return path


def read_bundle(path, expect_kind: str | None = None) -> tuple[str, dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise BundleError(f"{path}: not a cellpheno bundle")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise BundleError(f"{path}: unsupported bundle version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(data[start:start + hlen])
    kind = header["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise BundleError(f"{path}: expected a {expect_kind!r} bundle, found {kind!r}")
    offset = start + hlen
    arrays = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(spec["shape"])
        arrays[spec["name"]] = arr.copy()
        offset += count * dtype.itemsize
    if offset != len(data):
        raise BundleError(f"{path}: {len(data) - offset} trailing bytes")
    return kind, header["meta"], arrays
