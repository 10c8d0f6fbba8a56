"""Pseudo-orthophoto rasterization: adaptive resolution, two-layer splatting
with height-adaptive roof weights, soft compositing and SSAA.

All splatting happens on the supersampled grid (the roof-band test included);
image row 0 corresponds to maximum v so the raster follows image convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateGeometryError, InputError
from .ground_plane import LocalCloud, PlaneFrame, to_local_frame
from .kernels import disk_offsets, scatter_max, splat_accumulate
from .point_sampler import PointCloud
from .resample import downsample_ssaa, downsample_weighted


@dataclass(frozen=True)
class RenderConfig:
    rho_target: float = 1.5  # points per final pixel
    res_min: float = 0.0075  # m/px
    res_max: float = 0.05  # m/px
    pixel_cap: int = 100_000_000
    h_band: float = 0.18  # m
    roof_floor: float = 0.20  # m, lower clamp for the adaptive roof height
    dh_bw: float = 0.25  # m, roof band below the local top
    t_roof: float = 0.125  # height-weight temperature
    n_min_roof: int = 3
    splat_radius: float = 1.0  # px
    sigma_s: float = 0.5  # px, spatial kernel stddev (radius / 2)
    ssaa: int = 2


@dataclass(frozen=True)
class RasterSpec:
    resolution: float  # m/px at output resolution
    width: int
    height: int
    origin_uv: tuple[float, float]
    ssaa: int

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "width": self.width,
            "height": self.height,
            "origin_uv": list(self.origin_uv),
            "ssaa": self.ssaa,
        }


@dataclass(frozen=True)
class Layer:
    rgb: np.ndarray  # (H, W, 3) weighted-mean colors, 0 where weight == 0
    weight: np.ndarray  # (H, W) accumulated splat weight
    support: np.ndarray  # (H, W) contributing-point counts


@dataclass(frozen=True)
class Orthophoto:
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    coverage_mask: np.ndarray  # (H, W) bool
    roof_mask: np.ndarray  # (H, W) float in [0, 1]
    hole_mask: np.ndarray  # (H, W) bool, == ~coverage before inpainting
    spec: RasterSpec | None
    roof_height: float
    ground_support: np.ndarray | None = None
    roof_support: np.ndarray | None = None


def choose_resolution(local: LocalCloud, cfg: RenderConfig = RenderConfig()) -> RasterSpec:
    """Resolution from the target point density, clipped and pixel-capped.

    r = sqrt(A / (N / rho_target)) over the ground-band bounding box; canvas
    W = ceil(w_x/r)+1, H = ceil(w_y/r)+1, with r scaled up if W*H exceeds the
    pixel cap.
    """
    if len(local) == 0:
        raise DegenerateGeometryError("empty cloud")
    h = local.coords[:, 2]
    band = np.abs(h) <= cfg.h_band
    if band.sum() < 50:
        band = np.ones(len(local), dtype=bool)
    u = local.coords[band, 0]
    v = local.coords[band, 1]
    w_x = float(u.max() - u.min())
    w_y = float(v.max() - v.min())
    area = w_x * w_y
    if area <= 0.0:
        raise DegenerateGeometryError("ground bounding box has zero area")
    n_pix_target = band.sum() / cfg.rho_target
    r = math.sqrt(area / n_pix_target)
    r = min(max(r, cfg.res_min), cfg.res_max)
    width = math.ceil(w_x / r) + 1
    height = math.ceil(w_y / r) + 1
    if height * width > cfg.pixel_cap:
        r *= math.sqrt(height * width / cfg.pixel_cap)
        width = math.ceil(w_x / r) + 1
        height = math.ceil(w_y / r) + 1
        while height * width > cfg.pixel_cap:
            r *= 1.000001
            width = math.ceil(w_x / r) + 1
            height = math.ceil(w_y / r) + 1
    return RasterSpec(
        resolution=r,
        width=width,
        height=height,
        origin_uv=(float(u.min()), float(v.min())),
        ssaa=cfg.ssaa,
    )


def _to_pixels(local: LocalCloud, spec: RasterSpec, select: np.ndarray):
    """Supersampled (row, col) of selected points; vertical axis flipped."""
    r_ss = spec.resolution / spec.ssaa
    h_ss = spec.height * spec.ssaa
    w_ss = spec.width * spec.ssaa
    u = local.coords[select, 0]
    v = local.coords[select, 1]
    col = np.floor((u - spec.origin_uv[0]) / r_ss).astype(np.int64)
    row = h_ss - 1 - np.floor((v - spec.origin_uv[1]) / r_ss).astype(np.int64)
    ok = (row >= 0) & (row < h_ss) & (col >= 0) & (col < w_ss)
    idx = np.flatnonzero(select)[ok]
    return row[ok], col[ok], idx, h_ss, w_ss


def _spatial_kernel(cfg: RenderConfig):
    kdr, kdc, kd = disk_offsets(cfg.splat_radius)
    kw = np.exp(-(kd**2) / (2.0 * cfg.sigma_s**2))
    return kdr, kdc, kw


def _normalize_layer(color_sum, weight_sum, support) -> Layer:
    rgb = np.zeros_like(color_sum)
    nz = weight_sum > 0
    rgb[nz] = color_sum[nz] / weight_sum[nz, None]
    return Layer(rgb=rgb, weight=weight_sum, support=support)


def splat_ground(local: LocalCloud, spec: RasterSpec, cfg: RenderConfig = RenderConfig()) -> Layer:
    """Splat points within the ground height band with the radius-1 Gaussian disk."""
    sel = np.abs(local.coords[:, 2]) <= cfg.h_band
    rows, cols, idx, h_ss, w_ss = _to_pixels(local, spec, sel)
    kdr, kdc, kw = _spatial_kernel(cfg)
    color_sum, weight_sum, support = splat_accumulate(
        rows, cols, np.ones(rows.size), local.colors[idx], h_ss, w_ss, kdr, kdc, kw
    )
    return _normalize_layer(color_sum, weight_sum, support)


def estimate_roof_height(off_ground_heights: np.ndarray, cfg: RenderConfig = RenderConfig()) -> float:
    """Adaptive minimum roof height min(max(P25, roof_floor), median).

    An empty input yields +inf (no roof layer).
    """
    h = np.asarray(off_ground_heights, dtype=np.float64)
    if h.size == 0:
        return np.inf
    p25 = float(np.percentile(h, 25))
    med = float(np.percentile(h, 50))
    return min(max(p25, cfg.roof_floor), med)


def splat_roof(
    local: LocalCloud,
    spec: RasterSpec,
    h_roof: float,
    cfg: RenderConfig = RenderConfig(),
) -> tuple[Layer, np.ndarray]:
    """Roof layer: candidates above h_roof, restricted to a band below the
    per-pixel top height, weighted by exp(-(h - h_max)^2 / (2 sigma_h^2)).

    Pixels with fewer than n_min_roof contributors are suppressed.  The soft
    roof mask is the per-pixel weight sum normalized by its maximum.
    """
    h_ss = spec.height * spec.ssaa
    w_ss = spec.width * spec.ssaa
    empty = Layer(
        rgb=np.zeros((h_ss, w_ss, 3)),
        weight=np.zeros((h_ss, w_ss)),
        support=np.zeros((h_ss, w_ss), dtype=np.int64),
    )
    if not np.isfinite(h_roof):
        return empty, np.zeros((h_ss, w_ss))
    sel = local.coords[:, 2] >= h_roof
    rows, cols, idx, h_ss, w_ss = _to_pixels(local, spec, sel)
    if rows.size == 0:
        return empty, np.zeros((h_ss, w_ss))
    heights = local.coords[idx, 2]
    h_max = scatter_max(rows, cols, heights, h_ss, w_ss)
    tops = h_max[rows, cols]
    in_band = heights >= tops - cfg.dh_bw
    rows, cols, idx, heights, tops = (
        rows[in_band],
        cols[in_band],
        idx[in_band],
        heights[in_band],
        tops[in_band],
    )
    sigma_h = cfg.t_roof * cfg.dh_bw
    w_height = np.exp(-((heights - tops) ** 2) / (2.0 * sigma_h**2))
    kdr, kdc, kw = _spatial_kernel(cfg)
    color_sum, weight_sum, support = splat_accumulate(
        rows, cols, w_height, local.colors[idx], h_ss, w_ss, kdr, kdc, kw
    )
    suppressed = support < cfg.n_min_roof
    color_sum[suppressed] = 0.0
    weight_sum[suppressed] = 0.0
    layer = _normalize_layer(color_sum, weight_sum, support)
    peak = weight_sum.max()
    roof_mask = weight_sum / peak if peak > 0 else np.zeros_like(weight_sum)
    return layer, roof_mask


def composite(
    ground: Layer,
    roof: Layer,
    roof_mask: np.ndarray,
    spec: RasterSpec | None = None,
    roof_height: float = np.nan,
) -> Orthophoto:
    """Soft alpha blend of roof over ground: M*roof + (1-M)*ground."""
    if ground.rgb.shape != roof.rgb.shape or ground.rgb.shape[:2] != roof_mask.shape:
        raise InputError("composite: layer/mask dimensions disagree")
    m = roof_mask[:, :, None]
    rgb = m * roof.rgb + (1.0 - m) * ground.rgb
    coverage = (ground.weight > 0) | (roof_mask > 0)
    return Orthophoto(
        rgb=rgb,
        coverage_mask=coverage,
        roof_mask=roof_mask,
        hole_mask=~coverage,
        spec=spec,
        roof_height=roof_height,
        ground_support=ground.support,
        roof_support=roof.support,
    )


def _block_reduce(a: np.ndarray, k: int, how: str) -> np.ndarray:
    h, w = a.shape
    blocks = a.reshape(h // k, k, w // k, k)
    if how == "mean":
        return blocks.mean(axis=(1, 3))
    if how == "sum":
        return blocks.sum(axis=(1, 3))
    if how == "any":
        return blocks.any(axis=(1, 3))
    raise ValueError(how)


def _majority_filter(mask: np.ndarray) -> np.ndarray:
    ones = np.ones((3, 3))
    counts = ndimage.correlate(mask.astype(np.float64), ones, mode="constant", cval=0.0)
    valid = ndimage.correlate(np.ones_like(mask, dtype=np.float64), ones, mode="constant", cval=0.0)
    return counts * 2.0 > valid


def render_orthophoto(
    cloud: PointCloud,
    frame: PlaneFrame,
    cfg: RenderConfig = RenderConfig(),
) -> Orthophoto:
    """Full raster pipeline at ssaa-times resolution, coverage-normalized
    Lanczos minification, and a 3x3 majority clean-up of the coverage mask."""
    local = to_local_frame(cloud, frame)
    spec = choose_resolution(local, cfg)
    ground = splat_ground(local, spec, cfg)
    h = local.coords[:, 2]
    h_roof = estimate_roof_height(h[h > cfg.h_band], cfg)
    roof, roof_mask_ss = splat_roof(local, spec, h_roof, cfg)
    ortho_ss = composite(ground, roof, roof_mask_ss, spec=spec, roof_height=h_roof)

    k = spec.ssaa
    cov_ss = ortho_ss.coverage_mask.astype(np.float64)
    rgb, _ = downsample_weighted(ortho_ss.rgb, cov_ss, k)
    coverage = _block_reduce(ortho_ss.coverage_mask, k, "any")
    coverage = _majority_filter(coverage)
    roof_mask = _block_reduce(roof_mask_ss, k, "mean")
    ground_support = _block_reduce(ground.support, k, "sum")
    roof_support = _block_reduce(roof.support, k, "sum")
    rgb = np.where(coverage[:, :, None], rgb, 0.0)
    return Orthophoto(
        rgb=rgb,
        coverage_mask=coverage,
        roof_mask=roof_mask,
        hole_mask=~coverage,
        spec=spec,
        roof_height=h_roof,
        ground_support=ground_support,
        roof_support=roof_support,
    )


__all__ = [
    "RenderConfig",
    "RasterSpec",
    "Layer",
    "Orthophoto",
    "choose_resolution",
    "splat_ground",
    "estimate_roof_height",
    "splat_roof",
    "composite",
    "downsample_ssaa",
    "render_orthophoto",
]
