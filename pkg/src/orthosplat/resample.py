"""Separable Lanczos-3 resampling (PIL-compatible grid convention).

Output pixel i samples input coordinate (i + 0.5) * scale; the kernel is
stretched by the scale factor when minifying and weights are renormalized
over the in-bounds window.
"""

from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)

_LOBES = 3


def _lanczos3(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax < _LOBES, np.sinc(x) * np.sinc(x / _LOBES), 0.0)


def _weight_matrix(size_in: int, size_out: int) -> np.ndarray:
    scale = size_in / size_out
    filterscale = max(scale, 1.0)
    support = _LOBES * filterscale
    out = np.zeros((size_out, size_in), dtype=np.float64)
    for i in range(size_out):
        center = (i + 0.5) * scale
        lo = max(0, int(center - support + 0.5))
        hi = min(size_in, int(center + support + 0.5))
        j = np.arange(lo, hi)
        w = _lanczos3((j + 0.5 - center) / filterscale)
        total = w.sum()
        if total != 0.0:
            w = w / total
        out[i, lo:hi] = w
    return out


def resize_lanczos(image: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Resize an (H, W) or (H, W, C) float image to ``out_hw``."""
    h_in, w_in = image.shape[:2]
    h_out, w_out = out_hw
    rows = _weight_matrix(h_in, h_out)
    cols = _weight_matrix(w_in, w_out)
    if image.ndim == 2:
        return rows @ image @ cols.T
    planes = [rows @ image[:, :, c] @ cols.T for c in range(image.shape[2])]
    return np.stack(planes, axis=2)


def downsample_ssaa(image: np.ndarray, factor: int = 2) -> np.ndarray:
    """Lanczos-3 minification by an integer factor, clamped to [0, 1].

    Odd dimensions are padded by edge replication first (logged), so the
    output is ceil(size / factor) in each axis.
    """
    h, w = image.shape[:2]
    pad_h = (-h) % factor
    pad_w = (-w) % factor
    if pad_h or pad_w:
        log.warning("downsample_ssaa: padding odd-sized image %dx%d by replication", h, w)
        pad = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (image.ndim - 2)
        image = np.pad(image, pad, mode="edge")
        h, w = image.shape[:2]
    out = resize_lanczos(image, (h // factor, w // factor))
    return np.clip(out, 0.0, 1.0)


def downsample_weighted(image: np.ndarray, weight: np.ndarray, factor: int) -> tuple[np.ndarray, np.ndarray]:
    """Coverage-normalized Lanczos minification.

    Returns (resampled weight-normalized image, resampled weight); pixels with
    near-zero resampled weight come back black and should be treated as holes.
    """
    h, w = weight.shape
    target = (h // factor, w // factor)
    num = resize_lanczos(image * weight[:, :, None], target)
    den = resize_lanczos(weight, target)
    safe = np.maximum(den, 1e-3)
    out = np.clip(num / safe[:, :, None], 0.0, 1.0)
    out[den < 1e-3] = 0.0
    return out, den
