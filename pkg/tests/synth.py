"""Synthetic fields, clouds and scenes shared across the test suite."""

from __future__ import annotations

import numpy as np

from orthosplat.gaussian_field import GaussianField
from orthosplat.point_sampler import C0, PointCloud


def random_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def make_field(
    centers,
    scales,
    rotations=None,
    opacities=None,
    colors=None,
    visibility=None,
) -> GaussianField:
    """Degree-0 field whose sh_color equals ``colors`` exactly."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    n = centers.shape[0]
    scales = np.broadcast_to(np.asarray(scales, dtype=np.float64), (n, 3)).copy()
    if rotations is None:
        rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    rotations = np.broadcast_to(np.asarray(rotations, dtype=np.float64), (n, 4)).copy()
    if opacities is None:
        opacities = np.ones(n)
    opacities = np.broadcast_to(np.asarray(opacities, dtype=np.float64), (n,)).copy()
    if colors is None:
        colors = np.full((n, 3), 0.5)
    colors = np.broadcast_to(np.asarray(colors, dtype=np.float64), (n, 3)).copy()
    if visibility is None:
        visibility = np.ones(n)
    visibility = np.broadcast_to(np.asarray(visibility, dtype=np.float64), (n,)).copy()
    sh = ((colors - 0.5) / C0)[:, None, :]
    return GaussianField(
        centers=centers,
        scales=scales,
        rotations=rotations,
        opacities=opacities,
        sh=sh,
        visibility=visibility,
        sh_degree=0,
    )


def random_field(rng: np.random.Generator, n: int, scale_range=(0.05, 2.0)) -> GaussianField:
    return make_field(
        centers=rng.uniform(-10, 10, (n, 3)),
        scales=rng.uniform(*scale_range, (n, 3)),
        rotations=random_quaternions(rng, n),
        opacities=rng.uniform(0.05, 1.0, n),
        colors=rng.uniform(0, 1, (n, 3)),
        visibility=rng.uniform(0, 1, n),
    )


def grid_points(rng, x0, x1, y0, y1, z, n, jitter=0.0, z_jitter=0.0):
    pts = np.empty((n, 3))
    pts[:, 0] = rng.uniform(x0, x1, n)
    pts[:, 1] = rng.uniform(y0, y1, n)
    pts[:, 2] = z + (rng.standard_normal(n) * z_jitter if z_jitter else 0.0)
    if jitter:
        pts[:, :2] += rng.standard_normal((n, 2)) * jitter
    return pts


def make_cloud(positions, colors, normals=None) -> PointCloud:
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    colors = np.broadcast_to(np.asarray(colors, dtype=np.float64), (n, 3)).copy()
    if normals is None:
        normals = np.tile([0.0, 0.0, 1.0], (n, 1))
    return PointCloud(
        positions=positions,
        colors=colors,
        normals=np.asarray(normals, dtype=np.float64),
        source_index=np.zeros(n, dtype=np.int64),
        target_count=n,
    )


def ground_box_cloud(
    rng: np.random.Generator,
    ground_n: int = 200_000,
    ground_color=(0.1, 0.8, 0.1),
    roof_color=(0.85, 0.1, 0.1),
    box=(-3.0, 3.0, -3.0, 3.0),
    roof_h: float = 5.0,
    extent_x: float = 10.0,
    extent_y: float = 10.0,
    roof_spacing: float = 0.0125,
) -> PointCloud:
    """Green ground plane plus one flat red box roof.

    Ground points are random (count kept below the level where the adaptive
    resolution leaves the clip range, so r = 0.05 m/px exactly); roof points
    sit on an exact lattice at constant height, which makes the per-pixel
    roof weight sums uniform and the normalized roof mask exactly 1 in the
    box interior.
    """
    g = grid_points(rng, -extent_x, extent_x, -extent_y, extent_y, 0.0, ground_n)
    xs = np.arange(box[0] + roof_spacing / 2, box[1], roof_spacing)
    ys = np.arange(box[2] + roof_spacing / 2, box[3], roof_spacing)
    gx, gy = np.meshgrid(xs, ys)
    r = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, roof_h)], axis=1)
    pos = np.concatenate([g, r])
    col = np.concatenate(
        [np.tile(ground_color, (ground_n, 1)), np.tile(roof_color, (r.shape[0], 1))]
    )
    return make_cloud(pos, col)


def unit_frame():
    from orthosplat.ground_plane import PlaneFrame

    return PlaneFrame(
        normal=np.array([0.0, 0.0, 1.0]),
        basis_u=np.array([1.0, 0.0, 0.0]),
        basis_v=np.array([0.0, 1.0, 0.0]),
        origin=np.zeros(3),
        plane_offset=0.0,
        inlier_count=0,
    )


def local_cloud(coords, colors=(0.5, 0.5, 0.5)):
    from orthosplat.ground_plane import LocalCloud

    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    return LocalCloud(
        coords=coords,
        colors=np.broadcast_to(np.asarray(colors, dtype=np.float64), (n, 3)),
        frame=unit_frame(),
    )


def plane_outlier_cloud(
    rng: np.random.Generator,
    n_in: int = 700,
    n_out: int = 300,
    noise: float = 0.05,
    box: float = 10.0,
):
    """Noisy z=0 plane inliers plus uniform box outliers; returns the cloud
    and the ground-truth inlier indices."""
    inl = np.empty((n_in, 3))
    inl[:, :2] = rng.uniform(-box / 2, box / 2, (n_in, 2))
    inl[:, 2] = rng.standard_normal(n_in) * noise
    out = rng.uniform(-box / 2, box / 2, (n_out, 3))
    cloud = make_cloud(np.concatenate([inl, out]), [0.5, 0.5, 0.5])
    return cloud, np.arange(n_in)


def _hue_color(hue: float, sat: float = 0.6, val: float = 0.7) -> np.ndarray:
    import colorsys

    return np.array(colorsys.hsv_to_rgb(hue % 1.0, sat, val))


def scene_field(
    rng: np.random.Generator,
    n_buildings: int | None = None,
    palette: float | None = None,
) -> GaussianField:
    """A procedurally distinct scene: textured ground plus colored flat roofs.

    ``palette`` pins the dominant ground hue so corpora of scenes are
    chromatically well separated.
    """
    if n_buildings is None:
        n_buildings = int(rng.integers(2, 6))
    extent = 10.0
    cells = 14
    xs = np.linspace(-extent, extent, cells)
    gx, gy = np.meshgrid(xs, xs)
    centers = [np.stack([gx.ravel(), gy.ravel(), np.zeros(cells * cells)], axis=1)]
    base = _hue_color(palette) if palette is not None else rng.uniform(0.2, 0.8, 3)
    col = np.clip(base + rng.uniform(-0.15, 0.15, (cells * cells, 3)), 0.0, 1.0)
    colors = [col]
    scales = [np.tile([1.1, 1.1, 0.02], (cells * cells, 1))]
    for b in range(n_buildings):
        bx, by = rng.uniform(-6, 6, 2)
        w, h = rng.uniform(1.5, 3.5, 2)
        height = rng.uniform(3.0, 9.0)
        nb = 36
        roof = np.stack(
            [
                rng.uniform(bx - w, bx + w, nb),
                rng.uniform(by - h, by + h, nb),
                np.full(nb, height),
            ],
            axis=1,
        )
        centers.append(roof)
        scales.append(np.tile([w / 3.0, h / 3.0, 0.02], (nb, 1)))
        if palette is not None:
            roof_color = _hue_color(palette + 0.5 + 0.13 * b, sat=0.8, val=0.85)
        else:
            roof_color = rng.uniform(0.1, 0.9, 3)
        colors.append(np.tile(roof_color, (nb, 1)))
    return make_field(
        centers=np.concatenate(centers),
        scales=np.concatenate(scales),
        colors=np.concatenate(colors),
    )
