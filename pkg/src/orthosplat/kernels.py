"""Hot scatter/gather kernels with numba acceleration and a pure-numpy fallback.

The numba path is used when numba imports and the environment variable
``ORTHOSPLAT_NUMBA`` is not set to ``0``/``false``/``no``/``off``.  Both paths
accumulate in the same (point, kernel-offset) order, so splat and scatter-max
results are identical to the last bit; the KNN gather differs only by the
floating-point summation order of its per-pixel reduction.

``benchmarks/bench_kernels.py`` compares the two paths on production-sized
inputs.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("ORTHOSPLAT_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "no", "off")

try:
    if not _WANT_NUMBA:
        raise ImportError("numba disabled via ORTHOSPLAT_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # pragma: no cover - trivial passthrough
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


def numba_enabled() -> bool:
    """True when the accelerated path is active."""
    return HAVE_NUMBA


# ---------------------------------------------------------------------------
# disk splatting


def _splat_accumulate_numpy(rows, cols, point_w, colors, height, width, kdr, kdc, kw):
    color_acc = np.zeros((height, width, 3), dtype=np.float64)
    weight_acc = np.zeros((height, width), dtype=np.float64)
    support = np.zeros((height, width), dtype=np.int64)
    if rows.size == 0:
        return color_acc, weight_acc, support
    # (point, offset) grids flattened in C order == the numba loop order
    rr = rows[:, None] + kdr[None, :]
    cc = cols[:, None] + kdc[None, :]
    ww = point_w[:, None] * kw[None, :]
    valid = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width)
    flat = (rr * width + cc)[valid]
    wv = ww[valid]
    np.add.at(weight_acc.ravel(), flat, wv)
    np.add.at(support.ravel(), flat, 1)
    contrib = (ww[:, :, None] * colors[:, None, :])[valid]
    np.add.at(color_acc.reshape(-1, 3), flat, contrib)
    return color_acc, weight_acc, support


@njit(cache=True)
def _splat_accumulate_numba(rows, cols, point_w, colors, height, width, kdr, kdc, kw):  # pragma: no cover - exercised via dispatch
    color_acc = np.zeros((height, width, 3), dtype=np.float64)
    weight_acc = np.zeros((height, width), dtype=np.float64)
    support = np.zeros((height, width), dtype=np.int64)
    for j in range(rows.shape[0]):
        r0 = rows[j]
        c0 = cols[j]
        wj = point_w[j]
        for o in range(kdr.shape[0]):
            r = r0 + kdr[o]
            c = c0 + kdc[o]
            if 0 <= r < height and 0 <= c < width:
                w = wj * kw[o]
                weight_acc[r, c] += w
                support[r, c] += 1
                color_acc[r, c, 0] += w * colors[j, 0]
                color_acc[r, c, 1] += w * colors[j, 1]
                color_acc[r, c, 2] += w * colors[j, 2]
    return color_acc, weight_acc, support


def splat_accumulate(rows, cols, point_w, colors, height, width, kdr, kdc, kw):
    """Scatter-add colors over a pixel kernel.

    Each point j at integer pixel (rows[j], cols[j]) deposits
    ``point_w[j] * kw[o]`` at (rows[j]+kdr[o], cols[j]+kdc[o]); out-of-bounds
    targets are dropped.  Returns (weighted color sums HxWx3, weight sums HxW,
    contributing-point counts HxW).
    """
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    point_w = np.ascontiguousarray(point_w, dtype=np.float64)
    colors = np.ascontiguousarray(colors, dtype=np.float64)
    kdr = np.ascontiguousarray(kdr, dtype=np.int64)
    kdc = np.ascontiguousarray(kdc, dtype=np.int64)
    kw = np.ascontiguousarray(kw, dtype=np.float64)
    impl = _splat_accumulate_numba if HAVE_NUMBA else _splat_accumulate_numpy
    return impl(rows, cols, point_w, colors, int(height), int(width), kdr, kdc, kw)


# ---------------------------------------------------------------------------
# per-pixel max (roof-top heights)


def _scatter_max_numpy(rows, cols, values, height, width, fill):
    out = np.full((height, width), fill, dtype=np.float64)
    np.maximum.at(out, (rows, cols), values)
    return out


@njit(cache=True)
def _scatter_max_numba(rows, cols, values, height, width, fill):  # pragma: no cover - exercised via dispatch
    out = np.full((height, width), fill, dtype=np.float64)
    for j in range(rows.shape[0]):
        r = rows[j]
        c = cols[j]
        if values[j] > out[r, c]:
            out[r, c] = values[j]
    return out


def scatter_max(rows, cols, values, height, width, fill=-np.inf):
    """Per-pixel maximum of values scattered at (row, col). Indices must be in bounds."""
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    impl = _scatter_max_numba if HAVE_NUMBA else _scatter_max_numpy
    return impl(rows, cols, values, int(height), int(width), float(fill))


# ---------------------------------------------------------------------------
# inverse-distance KNN gather (inpainting)


def _knn_gather_numpy(hrows, hcols, valid, image, kdr, kdc, kdist, k, eps):
    n = hrows.shape[0]
    height, width = valid.shape
    rr = hrows[:, None] + kdr[None, :]
    cc = hcols[:, None] + kdc[None, :]
    inb = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width)
    rs = np.where(inb, rr, 0)
    cs = np.where(inb, cc, 0)
    ok = inb & valid[rs, cs]
    rank = np.cumsum(ok, axis=1)
    take = ok & (rank <= k)
    w = np.where(take, 1.0 / (kdist[None, :] + eps), 0.0)
    wsum = w.sum(axis=1)
    csum = np.einsum("no,noc->nc", w, image[rs, cs])
    filled = wsum > 0.0
    out = np.zeros((n, 3), dtype=np.float64)
    out[filled] = csum[filled] / wsum[filled, None]
    return out, filled


@njit(cache=True)
def _knn_gather_numba(hrows, hcols, valid, image, kdr, kdc, kdist, k, eps):  # pragma: no cover - exercised via dispatch
    n = hrows.shape[0]
    height, width = valid.shape
    out = np.zeros((n, 3), dtype=np.float64)
    filled = np.zeros(n, dtype=np.bool_)
    for j in range(n):
        found = 0
        wsum = 0.0
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        for o in range(kdr.shape[0]):
            r = hrows[j] + kdr[o]
            c = hcols[j] + kdc[o]
            if 0 <= r < height and 0 <= c < width and valid[r, c]:
                w = 1.0 / (kdist[o] + eps)
                wsum += w
                c0 += w * image[r, c, 0]
                c1 += w * image[r, c, 1]
                c2 += w * image[r, c, 2]
                found += 1
                if found >= k:
                    break
        if wsum > 0.0:
            out[j, 0] = c0 / wsum
            out[j, 1] = c1 / wsum
            out[j, 2] = c2 / wsum
            filled[j] = True
    return out, filled


def knn_gather(hrows, hcols, valid, image, kdr, kdc, kdist, k, eps=1e-6):
    """Inverse-distance average of the first ``k`` valid neighbors per pixel.

    Offsets must be pre-sorted by (distance, dr, dc); that ordering is the
    nearest-neighbor tie-break.  Returns (colors, filled-flag) per query pixel.
    """
    hrows = np.ascontiguousarray(hrows, dtype=np.int64)
    hcols = np.ascontiguousarray(hcols, dtype=np.int64)
    valid = np.ascontiguousarray(valid, dtype=np.bool_)
    image = np.ascontiguousarray(image, dtype=np.float64)
    kdr = np.ascontiguousarray(kdr, dtype=np.int64)
    kdc = np.ascontiguousarray(kdc, dtype=np.int64)
    kdist = np.ascontiguousarray(kdist, dtype=np.float64)
    impl = _knn_gather_numba if HAVE_NUMBA else _knn_gather_numpy
    return impl(hrows, hcols, valid, image, kdr, kdc, kdist, int(k), float(eps))


def disk_offsets(radius: float):
    """Integer offsets within Euclidean ``radius`` of the origin, sorted by
    (squared distance, dr, dc). Includes the origin."""
    r = int(np.floor(radius))
    dr, dc = np.mgrid[-r : r + 1, -r : r + 1]
    dr = dr.ravel()
    dc = dc.ravel()
    d2 = dr * dr + dc * dc
    keep = d2 <= radius * radius + 1e-12
    dr, dc, d2 = dr[keep], dc[keep], d2[keep]
    order = np.lexsort((dc, dr, d2))
    return dr[order].astype(np.int64), dc[order].astype(np.int64), np.sqrt(d2[order].astype(np.float64))
