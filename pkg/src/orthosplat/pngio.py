"""PNG artifact IO; every file carries the producing run's config digest in a
tEXt chunk so artifacts are traceable and byte-stable across identical runs."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo


def save_png(path, array: np.ndarray, config_digest: str = "") -> None:
    if array.dtype == bool:
        data = (array.astype(np.uint8)) * 255
    elif array.dtype == np.uint8:
        data = array
    else:
        data = np.clip(np.round(np.asarray(array, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    info = PngInfo()
    if config_digest:
        info.add_text("orthosplat:config", config_digest)
    Image.fromarray(data).save(Path(path), format="PNG", pnginfo=info)


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(Path(path)))


def load_png_float(path) -> np.ndarray:
    return load_png(path).astype(np.float64) / 255.0


def png_config_digest(path) -> str:
    return Image.open(Path(path)).text.get("orthosplat:config", "")
