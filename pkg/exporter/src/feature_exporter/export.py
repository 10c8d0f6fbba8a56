"""Batch export: run the frozen backbone over an image directory and write
one OGFV dump per image plus a manifest."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .filefmt import write_ogfv
from .vit import IMAGENET_MEAN, IMAGENET_STD, build_backbone

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def preprocess(path, resolution: int) -> torch.Tensor:
    """Resize shorter side, center-crop to a square, ImageNet-normalize."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = im.size
        scale = resolution / min(w, h)
        im = im.resize(
            (max(resolution, round(w * scale)), max(resolution, round(h * scale))),
            Image.LANCZOS,
        )
        w, h = im.size
        left = (w - resolution) // 2
        top = (h - resolution) // 2
        im = im.crop((left, top, left + resolution, top + resolution))
        arr = np.asarray(im, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(IMAGENET_MEAN, dtype=np.float32)) / np.asarray(
        IMAGENET_STD, dtype=np.float32
    )
    return torch.from_numpy(arr.transpose(2, 0, 1))


def export_features(
    image_dir,
    out_dir,
    resolution: int = 224,
    patch_size: int = 16,
    dim: int = 64,
    depth: int = 2,
    heads: int = 4,
    weights_path=None,
    seed: int = 0,
    side: str = "drone",
) -> dict:
    """One feature file per readable image; unreadable inputs are skipped with
    a warning and recorded under manifest errors.  Deterministic for fixed
    weights and preprocessing."""
    image_dir = Path(image_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.set_num_threads(1)  # keeps float reductions bit-stable across runs
    model, digest = build_backbone(
        resolution, patch_size, dim, depth, heads, weights_path=weights_path, seed=seed
    )
    backbone_name = f"patch-vit/p{patch_size}-d{dim}-l{depth}"
    extractor = f"{backbone_name}@{digest[:12]}"

    entries = []
    errors = []
    for path in sorted(image_dir.iterdir()):
        if path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            tensor = preprocess(path, resolution)
        except Exception as exc:  # unreadable image: skip, record, continue
            log.warning("skipping %s: %s", path.name, exc)
            errors.append({"path": path.name, "reason": str(exc)})
            continue
        with torch.no_grad():
            feats = model(tensor).numpy().astype(np.float64)
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        image_id = path.stem
        feature_name = path.stem + ".ogfv"
        blob = write_ogfv(
            feats, (model.grid, model.grid), image_id, extractor, side=side
        )
        (out_dir / feature_name).write_bytes(blob)
        entries.append({"id": image_id, "side": side, "path": feature_name, "source": path.name})

    manifest = {
        "backbone": backbone_name,
        "weight_digest": digest,
        "resolution": resolution,
        "patch_size": patch_size,
        "patch_grid": [model.grid, model.grid],
        "normalization": {"mean": list(IMAGENET_MEAN), "std": list(IMAGENET_STD)},
        "extractor": extractor,
        "images": entries,
        "errors": errors,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest
