"""Writer for the weightprov container and manifest file formats.

This module re-implements the (documented, bit-exact) external formats
rather than importing the analysis package: the file layout is the
interface between the two tools.

Container: bytes 0-7 little-endian u64 header length; UTF-8 JSON header
mapping name -> {dtype, shape, data_offsets} with offsets relative to the
header end; concatenated little-endian tensor data.  Canonical form sorts
names lexicographically with contiguous offsets and compact sorted-key
JSON, so identical tensor maps serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct
from typing import Mapping

import numpy as np

def write_container(tensors: Mapping[str, np.ndarray], path) -> None:
    header = {}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype == np.float32:
            dtype_name = "F32"
        elif arr.dtype == np.float64:
            dtype_name = "F64"
        else:
            raise ValueError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        blob = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
        header[name] = {
            "dtype": dtype_name,
            "shape": [int(v) for v in arr.shape],
            "data_offsets": [offset, offset + len(blob)],
        }
        blobs.append(blob)
        offset += len(blob)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for piece in blobs:
            fh.write(piece)


def write_manifest(manifest: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
