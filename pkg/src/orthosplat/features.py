"""Per-image patch descriptors: binary feature-file IO and a deterministic
baseline extractor.

The baseline extractor exists so the whole retrieval pipeline runs with no
neural backbone in-process: per grid cell it concatenates mean RGB, RGB
standard deviation and an 8-bin gradient-orientation histogram (D = 14),
l2-normalized.  External backbone dumps arrive through the same file format
and are tagged by extractor so different feature spaces can never be mixed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DigestMismatchError, FeatureFileError, InputError
from .resample import resize_lanczos

MAGIC = b"OGFV"
VERSION = 1
_HEADER = struct.Struct("<4sIII")

BASELINE_EXTRACTOR = "baseline-v1"
BASELINE_SIDE_PX = 256

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


@dataclass(frozen=True)
class PatchFeatureSet:
    features: np.ndarray  # (N, D) float64, unit rows
    grid: tuple[int, int]
    image_id: str
    extractor: str
    side: str = "drone"  # drone | satellite

    def __post_init__(self):
        if self.features.shape[0] != self.grid[0] * self.grid[1]:
            raise InputError("feature count does not match the patch grid")
        if self.side not in ("drone", "satellite"):
            raise InputError(f"unknown side tag {self.side!r}")


def write_feature_file(fset: PatchFeatureSet) -> bytes:
    n, d = fset.features.shape
    meta = json.dumps(
        {
            "image_id": fset.image_id,
            "extractor": fset.extractor,
            "grid": list(fset.grid),
            "side": fset.side,
        },
        sort_keys=True,
    ).encode("utf-8")
    payload = np.ascontiguousarray(fset.features, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, VERSION, n, d) + payload + meta


def load_feature_file(source) -> PatchFeatureSet:
    """Parse an OGFV dump (path or bytes); rows are renormalized when their
    norm drifts beyond 1e-5.  Errors carry the offending byte offset."""
    data = Path(source).read_bytes() if not isinstance(source, (bytes, bytearray)) else bytes(source)
    if len(data) < _HEADER.size:
        raise FeatureFileError("file shorter than the fixed header", offset=len(data))
    magic, version, n, d = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FeatureFileError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FeatureFileError(f"unsupported version {version}", offset=4)
    need = n * d * 4
    body = data[_HEADER.size :]
    if len(body) < need:
        raise FeatureFileError(
            f"payload needs {need} bytes, file holds {len(body)}", offset=_HEADER.size + len(body)
        )
    feats = np.frombuffer(body[:need], dtype="<f4").astype(np.float64).reshape(n, d)
    bad = ~np.isfinite(feats)
    if bad.any():
        flat = int(np.argmax(bad.ravel()))
        raise FeatureFileError("non-finite feature value", offset=_HEADER.size + 4 * flat)
    try:
        meta = json.loads(body[need:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FeatureFileError(f"bad trailing metadata: {exc}", offset=_HEADER.size + need)
    grid = tuple(meta.get("grid", ()))
    if len(grid) != 2 or grid[0] * grid[1] != n:
        raise FeatureFileError(
            f"grid {grid} does not account for {n} rows (CLS rows are not allowed)",
            offset=_HEADER.size + need,
        )
    norms = np.linalg.norm(feats, axis=1)
    if (norms == 0).any():
        row = int(np.argmax(norms == 0))
        raise FeatureFileError(f"zero feature row {row}", offset=_HEADER.size + 4 * row * d)
    if np.abs(norms - 1.0).max() > 1e-5:
        feats = feats / norms[:, None]
    return PatchFeatureSet(
        features=feats,
        grid=(int(grid[0]), int(grid[1])),
        image_id=str(meta.get("image_id", "")),
        extractor=str(meta.get("extractor", "")),
        side=str(meta.get("side", "drone")),
    )


def _luminance(rgb: np.ndarray) -> np.ndarray:
    return 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]


def _preprocess(image: np.ndarray, side_px: int) -> np.ndarray:
    if image.ndim != 3 or image.shape[2] != 3:
        raise InputError("baseline_extract expects an HxWx3 image")
    img = image.astype(np.float64)
    if image.dtype == np.uint8:
        img = img / 255.0
    h, w = img.shape[:2]
    if min(h, w) < 2:
        raise InputError("degenerate image")
    scale = side_px / min(h, w)
    target = (max(side_px, int(round(h * scale))), max(side_px, int(round(w * scale))))
    img = np.clip(resize_lanczos(img, target), 0.0, 1.0)
    th, tw = img.shape[:2]
    r0 = (th - side_px) // 2
    c0 = (tw - side_px) // 2
    return img[r0 : r0 + side_px, c0 : c0 + side_px]


def baseline_extract(
    image: np.ndarray,
    grid: tuple[int, int] = (16, 16),
    image_id: str = "",
    side: str = "drone",
) -> PatchFeatureSet:
    """Deterministic grid descriptor: resize + center-crop to a square, then
    per cell [mean RGB | RGB std | 8-bin Sobel orientation histogram]."""
    rows, cols = grid
    img = _preprocess(image, BASELINE_SIDE_PX)
    lum = _luminance(img)
    gx = ndimage.correlate(lum, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(lum, _SOBEL_X.T, mode="nearest")
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)
    bins = np.clip(np.floor((ang + np.pi) / (np.pi / 4.0)).astype(np.int64), 0, 7)

    ch = BASELINE_SIDE_PX // rows
    cw = BASELINE_SIDE_PX // cols
    feats = np.zeros((rows * cols, 14), dtype=np.float64)
    for r in range(rows):
        for c in range(cols):
            cell = img[r * ch : (r + 1) * ch, c * cw : (c + 1) * cw]
            feats[r * cols + c, 0:3] = cell.mean(axis=(0, 1))
            feats[r * cols + c, 3:6] = cell.std(axis=(0, 1))
            cb = bins[r * ch : (r + 1) * ch, c * cw : (c + 1) * cw].ravel()
            cm = mag[r * ch : (r + 1) * ch, c * cw : (c + 1) * cw].ravel()
            feats[r * cols + c, 6:14] = np.bincount(cb, weights=cm, minlength=8)
    norms = np.linalg.norm(feats, axis=1)
    zero = norms < 1e-12
    feats[zero] = 0.0
    feats[zero, 0] = 1.0
    norms[zero] = 1.0
    return PatchFeatureSet(
        features=feats / norms[:, None],
        grid=grid,
        image_id=image_id,
        extractor=BASELINE_EXTRACTOR,
        side=side,
    )


def pool_multiview(descriptors: list):
    """Average-pool several global descriptors into one (the multi-view
    baseline protocol): arithmetic mean, then l2 renormalization."""
    from .fisher_agg import GlobalDescriptor

    if not descriptors:
        raise InputError("pool_multiview needs at least one descriptor")
    dim = descriptors[0].vector.shape[0]
    tags = {(d.aggregator, d.vocab_digest) for d in descriptors}
    if len(tags) > 1:
        raise DigestMismatchError("pooling descriptors from different vocabularies")
    for d in descriptors:
        if d.vector.shape[0] != dim:
            raise InputError("pool_multiview dimension mismatch")
    mean = np.mean([d.vector for d in descriptors], axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise InputError("degenerate pool")
    return GlobalDescriptor(
        vector=mean / norm,
        aggregator=descriptors[0].aggregator,
        vocab_digest=descriptors[0].vocab_digest,
    )


def write_manifest(entries: list[dict], extractor: str, path) -> None:
    Path(path).write_text(
        json.dumps({"extractor": extractor, "images": entries}, indent=1, sort_keys=True)
    )


def load_manifest(path) -> tuple[str, list[dict]]:
    doc = json.loads(Path(path).read_text())
    return str(doc.get("extractor", "")), list(doc.get("images", []))
