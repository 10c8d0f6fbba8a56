"""Importance-weighted conversion of a Gaussian field into a colored point cloud.

Weights combine opacity and visibility, samples stay inside each Gaussian's
Mahalanobis ball (rejection sampling of the latent standard normal), colors
come from SH evaluated at six canonical axis directions, and normals are the
minimal-variance axes.  Per-Gaussian counter-based RNG streams (Philox keyed
by (seed, gaussian index)) make the result independent of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .gaussian_field import Gaussian, GaussianField, quat_to_rot, rotations_to_matrices

# real SH basis constants, degrees 0..3
C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

CANONICAL_DIRECTIONS = np.array(
    [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ]
)


@dataclass(frozen=True)
class SampledPoint:
    position: np.ndarray
    color: np.ndarray
    normal: np.ndarray
    source_index: int


@dataclass(frozen=True)
class PointCloud:
    """Column-oriented sampled cloud; immutable after build."""

    positions: np.ndarray  # (N, 3) float64, meters
    colors: np.ndarray  # (N, 3) float64 in [0, 1]
    normals: np.ndarray  # (N, 3) float64, unit
    source_index: np.ndarray  # (N,) int64
    target_count: int

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i: int) -> SampledPoint:
        return SampledPoint(
            self.positions[i], self.colors[i], self.normals[i], int(self.source_index[i])
        )


@dataclass(frozen=True)
class SamplerConfig:
    n_target: int = 10_000_000
    tau_m: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_target < 1:
            raise InputError("n_target must be >= 1")
        if self.tau_m <= 0:
            raise InputError("tau_m must be positive")


def sh_basis(directions: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values at unit directions, shape (n_dirs, (degree+1)^2)."""
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    cols = [np.full(d.shape[0], C0)]
    if degree >= 1:
        cols += [-C1 * y, C1 * z, -C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        cols += [
            C2[0] * x * y,
            C2[1] * y * z,
            C2[2] * (2.0 * zz - xx - yy),
            C2[3] * x * z,
            C2[4] * (xx - yy),
        ]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        cols += [
            C3[0] * y * (3.0 * xx - yy),
            C3[1] * x * y * z,
            C3[2] * y * (4.0 * zz - xx - yy),
            C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            C3[4] * x * (4.0 * zz - xx - yy),
            C3[5] * z * (xx - yy),
            C3[6] * x * (xx - 3.0 * yy),
        ]
    return np.stack(cols, axis=1)


def sh_color(g: Gaussian) -> np.ndarray:
    """RGB of a Gaussian: SH averaged over the canonical directions, DC offset
    0.5 + C0*f_dc, clamped to [0, 1]."""
    degree = int(round(np.sqrt(g.sh_coeffs.shape[0]))) - 1
    basis = sh_basis(CANONICAL_DIRECTIONS, degree)  # (6, B)
    per_dir = basis @ g.sh_coeffs  # (6, 3)
    return np.clip(0.5 + per_dir.mean(axis=0), 0.0, 1.0)


def sh_colors(field: GaussianField) -> np.ndarray:
    """Vectorized sh_color over a field -> (N, 3)."""
    basis = sh_basis(CANONICAL_DIRECTIONS, field.sh_degree)
    per_dir = np.einsum("db,nbc->ndc", basis, field.sh)
    return np.clip(0.5 + per_dir.mean(axis=1), 0.0, 1.0)


def _fix_normal_signs(normals: np.ndarray) -> np.ndarray:
    sign = np.sign(normals[:, 2])
    tie = sign == 0
    sign[tie] = np.sign(normals[tie, 1])
    tie = sign == 0
    sign[tie] = np.sign(normals[tie, 0])
    sign[sign == 0] = 1.0
    return normals * sign[:, None]


def normal_of(g: Gaussian) -> np.ndarray:
    """Minimal-variance axis of the Gaussian, oriented z >= 0 (ties: y, then x)."""
    r = quat_to_rot(g.rotation)
    v = r[:, int(np.argmin(g.scale))]
    return _fix_normal_signs(v[None, :])[0]


def normals_of(field: GaussianField) -> np.ndarray:
    """Vectorized normal_of -> (N, 3)."""
    mats = rotations_to_matrices(field.rotations)
    idx = np.argmin(field.scales, axis=1)
    v = mats[np.arange(len(field)), :, idx]
    return _fix_normal_signs(v)


def importance_scores(field: GaussianField) -> np.ndarray:
    """Normalized opacity*visibility weights (uniform fallback when all zero)."""
    if len(field) == 0:
        raise InputError("cannot score an empty field")
    raw = field.opacities * field.visibility
    total = raw.sum()
    if total <= 0.0:
        return np.full(len(field), 1.0 / len(field))
    return raw / total


def allocate_samples(weights: np.ndarray, n_target: int) -> np.ndarray:
    """Per-Gaussian sample counts max(1, floor(n_target * w))."""
    return np.maximum(1, np.floor(n_target * np.asarray(weights, dtype=np.float64)).astype(np.int64))


def _truncated_standard_normal(count: int, tau: float, rng: np.random.Generator) -> np.ndarray:
    """count x 3 standard-normal draws conditioned on ||z||_2 <= tau, by rejection."""
    out = np.empty((count, 3), dtype=np.float64)
    have = 0
    tau2 = tau * tau
    while have < count:
        need = count - have
        batch = max(need + 8, int(need * 1.5))
        z = rng.standard_normal((batch, 3))
        ok = z[np.einsum("ij,ij->i", z, z) <= tau2]
        take = min(ok.shape[0], need)
        out[have : have + take] = ok[:take]
        have += take
    return out


def sample_gaussian(g: Gaussian, count: int, tau_m: float, rng: np.random.Generator) -> np.ndarray:
    """Sample ``count`` world positions inside the Gaussian's Mahalanobis ball."""
    if count <= 0:
        return np.empty((0, 3), dtype=np.float64)
    z = _truncated_standard_normal(count, tau_m, rng)
    r = quat_to_rot(g.rotation)
    return g.center[None, :] + (z * g.scale[None, :]) @ r.T


def _stream(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def sample_point_cloud(field: GaussianField, cfg: SamplerConfig) -> PointCloud:
    """Full sampling pass: importance weights -> per-Gaussian counts ->
    Mahalanobis-bounded draws, each point inheriting its parent's color/normal."""
    if len(field) == 0:
        raise InputError("cannot sample an empty field")
    weights = importance_scores(field)
    counts = allocate_samples(weights, cfg.n_target)
    colors = sh_colors(field)
    normals = normals_of(field)
    mats = rotations_to_matrices(field.rotations)

    total = int(counts.sum())
    positions = np.empty((total, 3), dtype=np.float64)
    src = np.empty(total, dtype=np.int64)
    offset = 0
    for i in range(len(field)):
        c = int(counts[i])
        if c == 0:
            continue
        z = _truncated_standard_normal(c, cfg.tau_m, _stream(cfg.seed, i))
        positions[offset : offset + c] = field.centers[i] + (z * field.scales[i]) @ mats[i].T
        src[offset : offset + c] = i
        offset += c

    return PointCloud(
        positions=positions,
        colors=colors[src],
        normals=normals[src],
        source_index=src,
        target_count=cfg.n_target,
    )


def write_point_cloud_ply(cloud: PointCloud) -> bytes:
    """Binary XYZ-RGB-normal PLY for external inspection."""
    n = len(cloud)
    dtype = np.dtype(
        [
            ("x", "<f4"),
            ("y", "<f4"),
            ("z", "<f4"),
            ("nx", "<f4"),
            ("ny", "<f4"),
            ("nz", "<f4"),
            ("red", "u1"),
            ("green", "u1"),
            ("blue", "u1"),
        ]
    )
    out = np.zeros(n, dtype=dtype)
    for i, nm in enumerate(("x", "y", "z")):
        out[nm] = cloud.positions[:, i].astype(np.float32)
    for i, nm in enumerate(("nx", "ny", "nz")):
        out[nm] = cloud.normals[:, i].astype(np.float32)
    rgb8 = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    out["red"], out["green"], out["blue"] = rgb8[:, 0], rgb8[:, 1], rgb8[:, 2]
    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property float nx",
        "property float ny",
        "property float nz",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    return ("\n".join(header) + "\n").encode("ascii") + out.tobytes()
