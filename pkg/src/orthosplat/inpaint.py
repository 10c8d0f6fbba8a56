"""Hole detection, classification and filling for pseudo-orthophotos.

Small components get a fast-marching (Telea-style) fill, medium ones an
inverse-distance KNN fill on the raster, and large ones are either exported
as file-based completion jobs for an external network or filled by an
iterative boundary-peeling KNN fallback.  Fills only ever write hole pixels;
imports additionally feather a 3-px seam inside the job mask.
"""

from __future__ import annotations

import heapq
import io
import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InputError
from .kernels import disk_offsets, knn_gather
from .ortho_renderer import Orthophoto

log = logging.getLogger(__name__)

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_SQUARE = np.ones((3, 3), dtype=bool)

SMALL_MAX_AREA = 12
KNN_NEIGHBORS = 6
KNN_RADIUS = 4.0
TELEA_RADIUS = 3.0
CROP_MARGIN = 0.20
TAU_ALPHA = 0.05
TAU_SUPPORT = 1
LARGE_AREA_FRACTION = 0.005


@dataclass(frozen=True)
class HoleComponent:
    pixels: np.ndarray  # (n, 2) row, col
    area: int
    bbox: tuple[int, int, int, int]  # (row0, col0, row1, col1), exclusive ends
    klass: str  # small | medium | large


@dataclass(frozen=True)
class CompletionJob:
    image_png: bytes
    mask_png: bytes
    job_id: str
    provenance: dict


def hole_mask(
    ortho: Orthophoto,
    tau_alpha: float = TAU_ALPHA,
    tau_s: int = TAU_SUPPORT,
) -> np.ndarray:
    """Pixels lacking coverage or confident support in their active layer.

    The active layer is roof where the roof mask dominates (>= 0.5), ground
    elsewhere; roof-only pixels whose confidence sits below tau_alpha are
    holes as well.
    """
    hole = ~ortho.coverage_mask
    if ortho.ground_support is not None and ortho.roof_support is not None:
        roofish = ortho.roof_mask >= 0.5
        active = np.where(roofish, ortho.roof_support, ortho.ground_support)
        hole = hole | (active < tau_s)
        hole = hole | ((ortho.roof_mask > 0) & (ortho.roof_mask < tau_alpha) & (ortho.ground_support == 0))
    return hole


def morph_cleanup(mask: np.ndarray) -> np.ndarray:
    """3x3 closing then opening; padding never constrains the result
    (dilation sees 0 outside, erosion sees 1)."""
    closed = ndimage.binary_erosion(
        ndimage.binary_dilation(mask, _SQUARE, border_value=0), _SQUARE, border_value=1
    )
    return ndimage.binary_dilation(
        ndimage.binary_erosion(closed, _SQUARE, border_value=1), _SQUARE, border_value=0
    )


def classify_holes(
    mask: np.ndarray,
    s_small: int = SMALL_MAX_AREA,
    tau_a: float | None = None,
) -> list[HoleComponent]:
    """4-connected components: small (area <= s_small), large (area > tau_a,
    default 0.5% of the image), medium otherwise."""
    if tau_a is None:
        tau_a = LARGE_AREA_FRACTION * mask.size
    labels, count = ndimage.label(mask, structure=_CROSS)
    comps = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        rows, cols = np.nonzero(labels[sl] == i)
        rows = rows + sl[0].start
        cols = cols + sl[1].start
        area = rows.size
        klass = "small" if area <= s_small else ("large" if area > tau_a else "medium")
        comps.append(
            HoleComponent(
                pixels=np.stack([rows, cols], axis=1),
                area=int(area),
                bbox=(sl[0].start, sl[1].start, sl[0].stop, sl[1].stop),
                klass=klass,
            )
        )
    return comps


# ---------------------------------------------------------------------------
# Telea-style fast-marching fill


def _eikonal_update(t: np.ndarray, known: np.ndarray, r: int, c: int) -> float:
    h, w = t.shape
    best = np.inf
    horiz = [t[r, c - 1] if c > 0 and known[r, c - 1] else np.inf,
             t[r, c + 1] if c + 1 < w and known[r, c + 1] else np.inf]
    vert = [t[r - 1, c] if r > 0 and known[r - 1, c] else np.inf,
            t[r + 1, c] if r + 1 < h and known[r + 1, c] else np.inf]
    a = min(horiz)
    b = min(vert)
    if np.isinf(a) and np.isinf(b):
        return best
    if np.isinf(a):
        return b + 1.0
    if np.isinf(b):
        return a + 1.0
    if abs(a - b) < 1.0:
        return (a + b + np.sqrt(2.0 - (a - b) ** 2)) / 2.0
    return min(a, b) + 1.0


def _grad_t(t: np.ndarray, known: np.ndarray, r: int, c: int) -> tuple[float, float]:
    h, w = t.shape

    def axis(lo_ok, lo, hi_ok, hi, center):
        if lo_ok and hi_ok:
            return (hi - lo) / 2.0
        if hi_ok:
            return hi - center
        if lo_ok:
            return center - lo
        return 0.0

    gr = axis(r > 0 and known[r - 1, c], t[r - 1, c] if r > 0 else 0.0,
              r + 1 < h and known[r + 1, c], t[r + 1, c] if r + 1 < h else 0.0, t[r, c])
    gc = axis(c > 0 and known[r, c - 1], t[r, c - 1] if c > 0 else 0.0,
              c + 1 < w and known[r, c + 1], t[r, c + 1] if c + 1 < w else 0.0, t[r, c])
    return gr, gc


def telea_fill(
    image: np.ndarray,
    component: HoleComponent,
    valid_mask: np.ndarray,
    radius: float = TELEA_RADIUS,
) -> tuple[np.ndarray, np.ndarray]:
    """Fill one component in increasing distance-from-boundary order.

    Each pixel becomes the weighted mean of known neighbors within ``radius``
    using the direction * distance * level-set weight.  Returns the new image
    and the mask of pixels that could not be filled (no known neighbor).
    """
    h, w = valid_mask.shape
    out = image.copy()
    inside = np.zeros((h, w), dtype=bool)
    inside[component.pixels[:, 0], component.pixels[:, 1]] = True
    known = valid_mask & ~inside
    t = np.where(known, 0.0, np.inf)

    kdr, kdc, kd = disk_offsets(radius)
    keep = kd > 0
    kdr, kdc, kd = kdr[keep], kdc[keep], kd[keep]

    heap: list[tuple[float, int, int]] = []
    for r, c in component.pixels:
        tt = _eikonal_update(t, known, r, c)
        if np.isfinite(tt):
            heapq.heappush(heap, (tt, r, c))

    unfilled = inside.copy()
    while heap:
        tt, r, c = heapq.heappop(heap)
        if not inside[r, c] or known[r, c]:
            continue
        t[r, c] = tt
        gr, gc = _grad_t(t, known, r, c)
        wsum = 0.0
        csum = np.zeros(3)
        for o in range(kdr.size):
            qr, qc = r + kdr[o], c + kdc[o]
            if 0 <= qr < h and 0 <= qc < w and known[qr, qc]:
                dr, dc = float(r - qr), float(c - qc)
                d = kd[o]
                direc = abs(dr * gr + dc * gc) / d
                if direc == 0.0:
                    direc = 1e-6
                wgt = direc * (1.0 / (d * d)) * (1.0 / (1.0 + abs(t[qr, qc] - tt)))
                wsum += wgt
                csum += wgt * out[qr, qc]
        if wsum > 0.0:
            out[r, c] = csum / wsum
            known[r, c] = True
            unfilled[r, c] = False
            for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if 0 <= nr < h and 0 <= nc < w and inside[nr, nc] and not known[nr, nc]:
                    nt = _eikonal_update(t, known, nr, nc)
                    if np.isfinite(nt):
                        heapq.heappush(heap, (nt, nr, nc))
    if unfilled.any():
        log.warning("telea_fill: %d pixels had no known neighbors", int(unfilled.sum()))
    return out, unfilled


# ---------------------------------------------------------------------------
# KNN fill


def knn_fill(
    image: np.ndarray,
    component: HoleComponent,
    valid_mask: np.ndarray,
    k: int = KNN_NEIGHBORS,
    r_max: float = KNN_RADIUS,
    max_passes: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-distance fill from the k nearest valid pixels within ``r_max``.

    Unreached pixels are retried in later passes with earlier fills counted
    as valid, until done or no pass makes progress.  Returns the new image
    and the mask of pixels left unfilled.
    """
    h, w = valid_mask.shape
    out = image.copy()
    kdr, kdc, kd = disk_offsets(r_max)
    keep = kd > 0
    kdr, kdc, kd = kdr[keep], kdc[keep], kd[keep]

    inside = np.zeros((h, w), dtype=bool)
    inside[component.pixels[:, 0], component.pixels[:, 1]] = True
    valid = valid_mask & ~inside
    todo = component.pixels
    passes = 0
    while todo.shape[0] > 0:
        colors, filled = knn_gather(todo[:, 0], todo[:, 1], valid, out, kdr, kdc, kd, k)
        if not filled.any():
            break
        hit = todo[filled]
        out[hit[:, 0], hit[:, 1]] = colors[filled]
        valid[hit[:, 0], hit[:, 1]] = True
        todo = todo[~filled]
        passes += 1
        if max_passes is not None and passes >= max_passes:
            break
    unfilled = np.zeros((h, w), dtype=bool)
    if todo.shape[0]:
        unfilled[todo[:, 0], todo[:, 1]] = True
    return out, unfilled


def fallback_large_fill(
    image: np.ndarray,
    component: HoleComponent,
    valid_mask: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Shell-by-shell KNN fill for large holes when no external completer runs."""
    out, unfilled = knn_fill(image, component, valid_mask)
    if unfilled.any():
        log.warning("fallback_large_fill: %d pixels unreachable", int(unfilled.sum()))
    return out, unfilled


# ---------------------------------------------------------------------------
# completion jobs (external large-hole completion)


def _png_bytes(arr: np.ndarray) -> bytes:
    from PIL import Image

    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    elif arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _png_array(data: bytes) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(io.BytesIO(data)))


def _roof_boundary_band(roof_mask: np.ndarray) -> np.ndarray:
    """Pixels whose 2-px neighborhood straddles the 0.5 roof-mask level."""
    kdr, kdc, _ = disk_offsets(2.0)
    footprint = np.zeros((5, 5), dtype=bool)
    footprint[kdr + 2, kdc + 2] = True
    mx = ndimage.maximum_filter(roof_mask, footprint=footprint, mode="nearest")
    mn = ndimage.minimum_filter(roof_mask, footprint=footprint, mode="nearest")
    return (mx >= 0.5) & (mn < 0.5)


def export_completion_job(
    image: np.ndarray,
    components: list[HoleComponent],
    roof_mask: np.ndarray,
    job_id: str,
    provenance: dict | None = None,
) -> CompletionJob | None:
    """Bundle the large components into one dilated mask, clipped away from
    roof/ground boundary crossings.  Returns None when nothing is large."""
    large = [c for c in components if c.klass == "large"]
    if not large:
        return None
    h, w = roof_mask.shape
    mask = np.zeros((h, w), dtype=bool)
    for comp in large:
        mask[comp.pixels[:, 0], comp.pixels[:, 1]] = True
    kdr, kdc, _ = disk_offsets(2.0)
    footprint = np.zeros((5, 5), dtype=bool)
    footprint[kdr + 2, kdc + 2] = True
    mask = ndimage.binary_dilation(mask, structure=footprint, border_value=0)
    mask &= ~_roof_boundary_band(roof_mask)
    meta = dict(provenance or {})
    meta.update(
        {
            "job_id": job_id,
            "components": [
                {"area": c.area, "bbox": list(c.bbox)} for c in large
            ],
        }
    )
    return CompletionJob(
        image_png=_png_bytes(image),
        mask_png=_png_bytes(mask),
        job_id=job_id,
        provenance=meta,
    )


def write_job(job: CompletionJob, jobs_dir) -> None:
    from pathlib import Path

    d = Path(jobs_dir) / job.job_id
    d.mkdir(parents=True, exist_ok=True)
    (d / "image.png").write_bytes(job.image_png)
    (d / "mask.png").write_bytes(job.mask_png)
    (d / "meta.json").write_text(json.dumps(job.provenance, indent=1, sort_keys=True))


def import_completion(
    job: CompletionJob,
    job_id: str,
    completed_image: np.ndarray,
    original: np.ndarray,
) -> np.ndarray:
    """Blend an externally completed image back in, feathering a 3-px seam
    (linear alpha ramp) inside the job mask; pixels outside stay untouched."""
    if job_id != job.job_id:
        raise InputError(f"job id mismatch: expected {job.job_id!r}, got {job_id!r}")
    mask = _png_array(job.mask_png) > 127
    if completed_image.shape[:2] != mask.shape or original.shape[:2] != mask.shape:
        raise InputError("completed image dimensions do not match the job mask")
    depth = ndimage.distance_transform_edt(mask)
    alpha = np.clip(depth / 3.0, 0.0, 1.0)[:, :, None]
    out = original.copy()
    blend = (1.0 - alpha) * original + alpha * completed_image
    out[mask] = blend[mask]
    return out


def center_crop(image: np.ndarray, m_crop: float = CROP_MARGIN) -> np.ndarray:
    """Remove a floor(m_crop * size) margin on each side."""
    h, w = image.shape[:2]
    mh = int(np.floor(m_crop * h))
    mw = int(np.floor(m_crop * w))
    if h - 2 * mh < 1 or w - 2 * mw < 1:
        raise InputError(f"image {h}x{w} too small for a {m_crop} crop margin")
    return image[mh : h - mh, mw : w - mw]


@dataclass(frozen=True)
class InpaintResult:
    image: np.ndarray
    remaining_holes: np.ndarray
    jobs: list
    pending: bool


def inpaint_orthophoto(
    ortho: Orthophoto,
    tau_alpha: float = TAU_ALPHA,
    tau_s: int = TAU_SUPPORT,
    s_small: int = SMALL_MAX_AREA,
    tau_a: float | None = None,
    fallback: bool = True,
    job_prefix: str = "scene",
    provenance: dict | None = None,
) -> InpaintResult:
    """Full pass: detect, clean, classify, fill or export.

    With the fallback enabled no holes remain; without it, large components
    become completion jobs and ``pending`` is set.
    """
    mask = morph_cleanup(hole_mask(ortho, tau_alpha, tau_s))
    comps = classify_holes(mask, s_small=s_small, tau_a=tau_a)
    valid = ~mask
    image = ortho.rgb.copy()
    remaining = np.zeros_like(mask)
    escalated: list[HoleComponent] = []
    for comp in comps:
        if comp.klass == "small":
            image, unfilled = telea_fill(image, comp, valid)
            remaining |= unfilled
        elif comp.klass == "medium":
            image, unfilled = knn_fill(image, comp, valid)
            if unfilled.any():
                rows, cols = np.nonzero(unfilled)
                escalated.append(
                    HoleComponent(
                        pixels=np.stack([rows, cols], axis=1),
                        area=int(rows.size),
                        bbox=comp.bbox,
                        klass="large",
                    )
                )
        else:
            escalated.append(comp)

    jobs: list[CompletionJob] = []
    pending = False
    if escalated:
        if fallback:
            for comp in escalated:
                image, unfilled = fallback_large_fill(image, comp, valid)
                remaining |= unfilled
        else:
            job = export_completion_job(
                image, escalated, ortho.roof_mask, job_id=f"{job_prefix}-large", provenance=provenance
            )
            if job is not None:
                jobs.append(job)
                pending = True
            for comp in escalated:
                remaining[comp.pixels[:, 0], comp.pixels[:, 1]] = True
    return InpaintResult(image=image, remaining_holes=remaining, jobs=jobs, pending=pending)
