"""Dominant ground-plane estimation and the local (u, v, h) frame.

RANSAC over 3-point hypotheses (ties broken by smaller RMS inlier distance,
then lower iteration index), least-squares refit on the winners, PCA-derived
in-plane axes and a flip rule that makes roof heights positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateGeometryError, InputError
from .point_sampler import PointCloud

# reused by the flip-majority test so no extra constant is introduced
GROUND_BAND_M = 0.18


@dataclass(frozen=True)
class PlaneFrame:
    """Orthonormal frame {normal, basis_u, basis_v} with v = normal x u."""

    normal: np.ndarray  # (3,) unit
    basis_u: np.ndarray  # (3,) unit
    basis_v: np.ndarray  # (3,) unit
    origin: np.ndarray  # (3,) meters
    plane_offset: float  # d in a*x + b*y + c*z + d = 0
    inlier_count: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "normal": self.normal.tolist(),
                "basis_u": self.basis_u.tolist(),
                "basis_v": self.basis_v.tolist(),
                "origin": self.origin.tolist(),
                "plane_offset": self.plane_offset,
                "inlier_count": self.inlier_count,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "PlaneFrame":
        doc = json.loads(text)
        return PlaneFrame(
            normal=np.asarray(doc["normal"], dtype=np.float64),
            basis_u=np.asarray(doc["basis_u"], dtype=np.float64),
            basis_v=np.asarray(doc["basis_v"], dtype=np.float64),
            origin=np.asarray(doc["origin"], dtype=np.float64),
            plane_offset=float(doc["plane_offset"]),
            inlier_count=int(doc["inlier_count"]),
        )


@dataclass(frozen=True)
class LocalCloud:
    """Points re-expressed as (u, v, h) in the plane frame, colors carried along."""

    coords: np.ndarray  # (N, 3): u, v, h in meters
    colors: np.ndarray  # (N, 3)
    frame: PlaneFrame

    def __len__(self) -> int:
        return self.coords.shape[0]


def _plane_from_triplet(p: np.ndarray) -> tuple[np.ndarray, float] | None:
    n = np.cross(p[1] - p[0], p[2] - p[0])
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n = n / norm
    return n, float(-n @ p[0])


def _least_squares_plane(points: np.ndarray) -> tuple[np.ndarray, float]:
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    n = vecs[:, 0]
    n = n / np.linalg.norm(n)
    return n, float(-n @ centroid)


def fit_plane_ransac(
    cloud: PointCloud,
    delta: float = 0.30,
    iters: int = 1000,
    rng: np.random.Generator | None = None,
) -> tuple[tuple[np.ndarray, float], np.ndarray]:
    """Best plane over ``iters`` random 3-point hypotheses, refit on inliers.

    Returns ((unit normal, offset d), inlier index array).  Inliers are points
    with |signed distance| <= delta against the refit plane.
    """
    rng = rng or np.random.default_rng(0)
    pts = cloud.positions
    n_pts = pts.shape[0]
    if n_pts < 3:
        raise DegenerateGeometryError("plane fit needs at least 3 points")

    best_count = -1
    best_rms = np.inf
    best_plane: tuple[np.ndarray, float] | None = None
    for _ in range(iters):
        idx = rng.choice(n_pts, size=3, replace=False)
        hyp = _plane_from_triplet(pts[idx])
        if hyp is None:
            continue
        n, d = hyp
        dist = np.abs(pts @ n + d)
        mask = dist <= delta
        count = int(mask.sum())
        if count < 3:
            continue
        rms = float(np.sqrt(np.mean(dist[mask] ** 2)))
        if count > best_count or (count == best_count and rms < best_rms):
            best_count, best_rms, best_plane = count, rms, (n, d)

    if best_plane is None:
        raise DegenerateGeometryError("all RANSAC hypotheses were collinear")

    n, d = _least_squares_plane(pts[np.abs(pts @ best_plane[0] + best_plane[1]) <= delta])
    inliers = np.flatnonzero(np.abs(pts @ n + d) <= delta)
    if inliers.size < 3:
        # refit drifted away from the consensus; keep the hypothesis plane
        n, d = best_plane
        inliers = np.flatnonzero(np.abs(pts @ n + d) <= delta)
    return (n, d), inliers


def _signed_axis(u: np.ndarray) -> np.ndarray:
    for comp in (0, 1, 2):
        if abs(u[comp]) > 1e-12:
            return u if u[comp] > 0 else -u
    return u


def pca_basis(inlier_points: np.ndarray, normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """In-plane axes from the top principal directions of the inliers.

    u is re-orthonormalized against the normal and signed to have non-negative
    dot with +x (tie-break +y); v = normal x u.  Rank-deficient inlier sets
    fall back to projecting a canonical axis onto the plane.
    """
    n = normal / np.linalg.norm(normal)
    if inlier_points.shape[0] < 2:
        return _canonical_basis(n)
    proj = inlier_points - np.outer(inlier_points @ n, n)
    centered = proj - proj.mean(axis=0)
    cov = centered.T @ centered
    vals, vecs = np.linalg.eigh(cov)
    if vals[-1] <= 1e-18 or vals[-2] <= 1e-12 * vals[-1]:
        return _canonical_basis(n)
    u = vecs[:, -1]
    u = u - (u @ n) * n
    norm_u = np.linalg.norm(u)
    if norm_u < 1e-12:
        return _canonical_basis(n)
    u = _signed_axis(u / norm_u)
    v = np.cross(n, u)
    return u, v / np.linalg.norm(v)


def _canonical_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    axis = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = axis - (axis @ n) * n
    u = _signed_axis(u / np.linalg.norm(u))
    v = np.cross(n, u)
    return u, v / np.linalg.norm(v)


def build_frame(cloud: PointCloud, plane: tuple[np.ndarray, float], inliers: np.ndarray) -> PlaneFrame:
    """Assemble the full frame: PCA axes plus the mean of plane-projected points."""
    n, d = plane
    n = n / np.linalg.norm(n)
    pts = cloud.positions
    origin = pts.mean(axis=0)
    origin = origin - (origin @ n + d) * n  # mean of projections == projected mean
    u, v = pca_basis(pts[inliers], n)
    return PlaneFrame(
        normal=n,
        basis_u=u,
        basis_v=v,
        origin=origin,
        plane_offset=float(-n @ origin),
        inlier_count=int(inliers.size),
    )


def to_local_frame(cloud: PointCloud, frame: PlaneFrame) -> LocalCloud:
    """Express the cloud as (u, v, h); flip the normal if most off-plane
    points end up below the plane, so that roofs are positive."""
    rel = cloud.positions - frame.origin
    coords = np.stack(
        [rel @ frame.basis_u, rel @ frame.basis_v, rel @ frame.normal], axis=1
    )
    off = coords[np.abs(coords[:, 2]) > GROUND_BAND_M, 2]
    if off.size and (off < 0).sum() * 2 > off.size:
        new_normal = -frame.normal
        new_v = np.cross(new_normal, frame.basis_u)
        frame = replace(
            frame,
            normal=new_normal,
            basis_v=new_v,
            plane_offset=float(-new_normal @ frame.origin),
        )
        coords[:, 1] *= -1.0
        coords[:, 2] *= -1.0
    return LocalCloud(coords=coords, colors=cloud.colors, frame=frame)


def estimate_frame(
    cloud: PointCloud,
    delta: float = 0.30,
    iters: int = 1000,
    rng: np.random.Generator | None = None,
) -> PlaneFrame:
    """fit_plane_ransac + build_frame in one call."""
    plane, inliers = fit_plane_ransac(cloud, delta=delta, iters=iters, rng=rng)
    return build_frame(cloud, plane, inliers)
