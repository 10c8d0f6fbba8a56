"""Writer for the OGFV patch-feature wire format.

Layout: "OGFV" magic, u32 version, u32 N, u32 D, N*D little-endian float32
row-major payload, then trailing UTF-8 JSON metadata (image id, extractor,
grid, side).
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"OGFV"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_ogfv(
    features: np.ndarray,
    grid: tuple[int, int],
    image_id: str,
    extractor: str,
    side: str = "drone",
) -> bytes:
    n, d = features.shape
    if n != grid[0] * grid[1]:
        raise ValueError(f"{n} rows do not fill a {grid} grid")
    meta = json.dumps(
        {"image_id": image_id, "extractor": extractor, "grid": list(grid), "side": side},
        sort_keys=True,
    ).encode("utf-8")
    payload = np.ascontiguousarray(features, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, VERSION, n, d) + payload + meta
