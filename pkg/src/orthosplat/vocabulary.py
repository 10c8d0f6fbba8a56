"""Drone-only visual vocabularies: descriptor subsampling, diagonal-covariance
GMM via EM, and a k-means codebook for the residual-aggregation ablations.

Vocabularies can only be built from drone-tagged feature sets; feeding a
satellite-tagged set anywhere into this module raises.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, SatelliteFreeViolation
from .features import PatchFeatureSet

GMM_MAGIC = b"OGGM"
KMEANS_MAGIC = b"OGKM"
VERSION = 1
_HEADER = struct.Struct("<4sIII")

VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class EmConfig:
    seed: int = 0
    max_iter: int = 200
    tol: float = 1e-6  # average log-likelihood improvement per point
    var_floor: float = VAR_FLOOR


@dataclass(frozen=True)
class DiagGmm:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D), >= var_floor
    trained_on: str = "drone"
    ll_history: tuple = field(default=(), repr=False)
    converged: bool = True

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class Codebook:
    centers: np.ndarray  # (K, D)

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def subsample_descriptors(
    sets: list[PatchFeatureSet],
    n_total: int = 500_000,
    per_image_cap: int | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Uniform without-replacement sample: per-image up to the cap (default
    twice the even share), then a global downsample to exactly
    min(n_total, available).  Row order is stable for a fixed seed."""
    if not sets:
        raise InputError("no feature sets to subsample")
    for s in sets:
        if s.side != "drone":
            raise SatelliteFreeViolation(
                f"image {s.image_id!r} is satellite-tagged; vocabularies are drone-only"
            )
    rng = rng or np.random.default_rng(0)
    if per_image_cap is None:
        per_image_cap = 2 * int(np.ceil(n_total / len(sets)))
    picked = []
    for s in sets:
        n = s.features.shape[0]
        if n <= per_image_cap:
            picked.append(s.features)
        else:
            idx = np.sort(rng.choice(n, size=per_image_cap, replace=False))
            picked.append(s.features[idx])
    pool = np.concatenate(picked, axis=0)
    if pool.shape[0] > n_total:
        idx = np.sort(rng.choice(pool.shape[0], size=n_total, replace=False))
        pool = pool[idx]
    return pool


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = x[rng.integers(n)]
            continue
        centers[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _log_densities(x: np.ndarray, gmm_means, gmm_vars) -> np.ndarray:
    """(N, K) log N(x | mu_k, diag var_k)."""
    inv = 1.0 / gmm_vars  # (K, D)
    quad = (
        (x**2) @ inv.T
        - 2.0 * (x @ (gmm_means * inv).T)
        + (gmm_means**2 * inv).sum(axis=1)[None, :]
    )
    const = -0.5 * (x.shape[1] * np.log(2.0 * np.pi) + np.log(gmm_vars).sum(axis=1))
    return const[None, :] - 0.5 * quad


def _e_step(x, x2, weights, means, variances):
    """Responsibilities and per-row log-likelihood in one pass (in-place on
    the (N, K) buffer; a single exp evaluation)."""
    inv = 1.0 / variances
    joint = x2 @ inv.T
    joint -= 2.0 * (x @ (means * inv).T)
    joint += ((means**2) * inv).sum(axis=1)[None, :]
    joint *= -0.5
    with np.errstate(divide="ignore"):
        const = (
            -0.5 * (x.shape[1] * np.log(2.0 * np.pi) + np.log(variances).sum(axis=1))
            + np.log(weights)
        )
    joint += const[None, :]
    m = joint.max(axis=1)
    joint -= m[:, None]
    np.exp(joint, out=joint)
    s = joint.sum(axis=1)
    joint /= s[:, None]
    return joint, m + np.log(s)


def _validate_data(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InputError("expected an (N, D) sample matrix")
    if not np.isfinite(x).all():
        raise InputError("non-finite values in the sample matrix")
    return x


def fit_gmm(x: np.ndarray, k: int = 256, em_cfg: EmConfig = EmConfig()) -> DiagGmm:
    """Diagonal-covariance EM from a k-means++ start.

    Stops when the average log-likelihood improves by less than the tolerance
    or at the iteration cap; empty components are reseeded from the points
    the current mixture explains worst.
    """
    x = _validate_data(x)
    n, d = x.shape
    if n < 10 * k:
        raise InputError(f"need at least {10 * k} rows to fit {k} components, got {n}")
    rng = np.random.default_rng(em_cfg.seed)
    means = _kmeans_pp(x, k, rng)
    global_var = np.maximum(x.var(axis=0), em_cfg.var_floor)
    variances = np.tile(global_var, (k, 1))
    weights = np.full(k, 1.0 / k)

    x2 = x**2
    history = []
    prev = -np.inf
    converged = False
    for _ in range(em_cfg.max_iter):
        gamma, ll_n = _e_step(x, x2, weights, means, variances)
        avg_ll = float(ll_n.mean())

        nk = gamma.sum(axis=0)
        empty = nk < 1e-10
        if empty.any():
            worst = np.argsort(ll_n)
            for j, comp in enumerate(np.flatnonzero(empty)):
                means[comp] = x[worst[j % n]]
                variances[comp] = global_var
                nk[comp] = 1.0
            weights = nk / nk.sum()
            history.append(avg_ll)
            prev = -np.inf  # reseeding invalidates the monotone comparison
            continue

        weights = nk / n
        means = (gamma.T @ x) / nk[:, None]
        variances = np.maximum(
            (gamma.T @ x2) / nk[:, None] - means**2, em_cfg.var_floor
        )
        history.append(avg_ll)
        if avg_ll - prev < em_cfg.tol:
            converged = True
            break
        prev = avg_ll

    return DiagGmm(
        weights=weights,
        means=means,
        variances=variances,
        trained_on="drone",
        ll_history=tuple(history),
        converged=converged,
    )


def posteriors(gmm: DiagGmm, feature) -> np.ndarray:
    """Responsibilities gamma_k for one D-vector (or (N, D) batch), computed
    in log space with max subtraction; each row sums to 1."""
    x = np.asarray(feature, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if not np.isfinite(x).all():
        raise InputError("non-finite feature")
    joint = _log_densities(x, gmm.means, gmm.variances) + np.log(gmm.weights)[None, :]
    joint -= joint.max(axis=1, keepdims=True)
    g = np.exp(joint)
    g /= g.sum(axis=1, keepdims=True)
    return g[0] if single else g


def fit_kmeans(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> Codebook:
    """Lloyd iterations from a k-means++ start, run to an assignment fixpoint.

    Clusters emptied by duplicate collapse are reseeded with the points
    farthest from their assigned centers.
    """
    x = _validate_data(x)
    n = x.shape[0]
    if n < k:
        raise InputError(f"need at least {k} rows for {k} clusters, got {n}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, k, rng)
    x2sum = (x**2).sum(axis=1)[:, None]
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = x2sum - 2.0 * x @ centers.T + (centers**2).sum(axis=1)[None, :]
        new_assign = np.argmin(d2, axis=1)
        counts = np.bincount(new_assign, minlength=k)
        if (counts == 0).any():
            dist_to_own = d2[np.arange(n), new_assign]
            far = np.argsort(-dist_to_own)
            for j, comp in enumerate(np.flatnonzero(counts == 0)):
                centers[comp] = x[far[j % n]]
            continue
        if (new_assign == assign).all():
            break
        assign = new_assign
        for j in range(k):
            centers[j] = x[assign == j].mean(axis=0)
    return Codebook(centers=centers)


# ---------------------------------------------------------------------------
# serialization


def _meta_bytes(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True).encode("utf-8")


def save_gmm(gmm: DiagGmm, path, extra_meta: dict | None = None) -> str:
    """Write the OGGM binary + a JSON summary sidecar; returns the digest."""
    k, d = gmm.k, gmm.dim
    meta = {"trained_on": gmm.trained_on, "converged": gmm.converged}
    meta.update(extra_meta or {})
    blob = (
        _HEADER.pack(GMM_MAGIC, VERSION, k, d)
        + np.ascontiguousarray(gmm.weights, dtype="<f8").tobytes()
        + np.ascontiguousarray(gmm.means, dtype="<f8").tobytes()
        + np.ascontiguousarray(gmm.variances, dtype="<f8").tobytes()
        + _meta_bytes(meta)
    )
    digest = hashlib.sha256(blob).hexdigest()
    p = Path(path)
    p.write_bytes(blob)
    summary = {"kind": "gmm", "k": k, "dim": d, "digest": digest}
    summary.update(meta)
    p.with_suffix(p.suffix + ".json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return digest


def load_gmm(path) -> tuple[DiagGmm, str]:
    blob = Path(path).read_bytes()
    magic, version, k, d = _HEADER.unpack_from(blob, 0)
    if magic != GMM_MAGIC or version != VERSION:
        raise InputError(f"not an OGGM v{VERSION} file")
    off = _HEADER.size
    weights = np.frombuffer(blob, dtype="<f8", count=k, offset=off).copy()
    off += 8 * k
    means = np.frombuffer(blob, dtype="<f8", count=k * d, offset=off).reshape(k, d).copy()
    off += 8 * k * d
    variances = np.frombuffer(blob, dtype="<f8", count=k * d, offset=off).reshape(k, d).copy()
    off += 8 * k * d
    meta = json.loads(blob[off:].decode("utf-8")) if len(blob) > off else {}
    gmm = DiagGmm(
        weights=weights,
        means=means,
        variances=variances,
        trained_on=str(meta.get("trained_on", "drone")),
        converged=bool(meta.get("converged", True)),
    )
    return gmm, hashlib.sha256(blob).hexdigest()


def save_kmeans(book: Codebook, path, extra_meta: dict | None = None) -> str:
    k, d = book.k, book.dim
    meta = {"trained_on": "drone"}
    meta.update(extra_meta or {})
    blob = (
        _HEADER.pack(KMEANS_MAGIC, VERSION, k, d)
        + np.ascontiguousarray(book.centers, dtype="<f8").tobytes()
        + _meta_bytes(meta)
    )
    digest = hashlib.sha256(blob).hexdigest()
    p = Path(path)
    p.write_bytes(blob)
    summary = {"kind": "kmeans", "k": k, "dim": d, "digest": digest}
    summary.update(meta)
    p.with_suffix(p.suffix + ".json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return digest


def load_kmeans(path) -> tuple[Codebook, str]:
    blob = Path(path).read_bytes()
    magic, version, k, d = _HEADER.unpack_from(blob, 0)
    if magic != KMEANS_MAGIC or version != VERSION:
        raise InputError(f"not an OGKM v{VERSION} file")
    centers = np.frombuffer(blob, dtype="<f8", count=k * d, offset=_HEADER.size).reshape(k, d).copy()
    return Codebook(centers=centers), hashlib.sha256(blob).hexdigest()
