"""Global descriptor aggregation: Fisher vectors over the diagonal GMM plus
VLAD / SoftVLAD residual baselines, with power + l2 normalization.

Patch rows are put into a canonical lexicographic order before accumulation,
so descriptors are bitwise invariant to patch permutations.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateDescriptorError, DigestMismatchError, InputError
from .features import PatchFeatureSet
from .vocabulary import Codebook, DiagGmm, posteriors

STORE_MAGIC = b"OGDS"
STORE_VERSION = 1
_HEADER = struct.Struct("<4sIII")

POWER_EPS = 1e-12


@dataclass(frozen=True)
class GlobalDescriptor:
    vector: np.ndarray  # unit l2
    aggregator: str  # fisher | vlad | softvlad(alpha)
    vocab_digest: str = ""


def _patch_matrix(patches) -> np.ndarray:
    x = patches.features if isinstance(patches, PatchFeatureSet) else np.asarray(patches, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise InputError("need a non-empty (N, D) patch matrix")
    order = np.lexsort(tuple(x[:, d] for d in reversed(range(x.shape[1]))))
    return x[order]


def fisher_vector(gmm: DiagGmm, patches) -> np.ndarray:
    """Raw 2*K*D Fisher gradient [G_mu_1..K ; G_sigma_1..K].

    G_mu_k    = 1/(N sqrt(pi_k))   * sum_i gamma_ik (f_i - mu_k) / sigma_k
    G_sigma_k = 1/(N sqrt(2 pi_k)) * sum_i gamma_ik [ (f_i - mu_k)^2 / sigma_k^2 - 1 ]
    """
    x = _patch_matrix(patches)
    n, d = x.shape
    if d != gmm.dim:
        raise InputError(f"patch dim {d} != vocabulary dim {gmm.dim}")
    gamma = posteriors(gmm, x)  # (N, K)
    s0 = gamma.sum(axis=0)  # (K,)
    s1 = gamma.T @ x  # (K, D)
    s2 = gamma.T @ (x**2)  # (K, D)
    mu, var = gmm.means, gmm.variances
    sigma = np.sqrt(var)
    g_mu = (s1 - mu * s0[:, None]) / (n * np.sqrt(gmm.weights)[:, None] * sigma)
    central2 = s2 - 2.0 * mu * s1 + (mu**2) * s0[:, None]
    g_sigma = (central2 / var - s0[:, None]) / (n * np.sqrt(2.0 * gmm.weights)[:, None])
    return np.concatenate([g_mu.ravel(), g_sigma.ravel()])


def power_l2_normalize(
    raw: np.ndarray,
    eps: float = POWER_EPS,
    aggregator: str = "fisher",
    vocab_digest: str = "",
) -> GlobalDescriptor:
    """Signed square root (with eps) followed by l2 normalization."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.isfinite(raw).all():
        raise InputError("non-finite descriptor")
    powered = np.sign(raw) * np.sqrt(np.abs(raw) + eps)
    norm = np.linalg.norm(powered)
    if norm < 1e-12:
        raise DegenerateDescriptorError("degenerate descriptor (all-zero after power step)")
    return GlobalDescriptor(vector=powered / norm, aggregator=aggregator, vocab_digest=vocab_digest)


def _intra_normalize(blocks: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(blocks, axis=1)
    out = blocks.copy()
    nz = norms > 1e-12
    out[nz] /= norms[nz, None]
    out[~nz] = 0.0
    return out


def vlad(codebook: Codebook, patches) -> np.ndarray:
    """Hard-assignment residual aggregation, intra-normalized per center."""
    x = _patch_matrix(patches)
    if x.shape[1] != codebook.dim:
        raise InputError(f"patch dim {x.shape[1]} != codebook dim {codebook.dim}")
    d2 = (
        (x**2).sum(axis=1)[:, None]
        - 2.0 * x @ codebook.centers.T
        + (codebook.centers**2).sum(axis=1)[None, :]
    )
    assign = np.argmin(d2, axis=1)  # ties -> lowest index
    k = codebook.k
    blocks = np.zeros((k, codebook.dim), dtype=np.float64)
    np.add.at(blocks, assign, x)
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    blocks -= counts[:, None] * codebook.centers
    return _intra_normalize(blocks).ravel()


def softvlad(codebook: Codebook, patches, alpha: float) -> np.ndarray:
    """Softmax-over-squared-distance residual aggregation with temperature alpha."""
    if alpha <= 0:
        raise InputError("alpha must be positive")
    x = _patch_matrix(patches)
    if x.shape[1] != codebook.dim:
        raise InputError(f"patch dim {x.shape[1]} != codebook dim {codebook.dim}")
    d2 = (
        (x**2).sum(axis=1)[:, None]
        - 2.0 * x @ codebook.centers.T
        + (codebook.centers**2).sum(axis=1)[None, :]
    )
    logits = -alpha * d2
    logits -= logits.max(axis=1, keepdims=True)
    a = np.exp(logits)
    a /= a.sum(axis=1, keepdims=True)  # (N, K)
    blocks = a.T @ x - a.sum(axis=0)[:, None] * codebook.centers
    return _intra_normalize(blocks).ravel()


def aggregate(patches, vocab, aggregator: str, vocab_digest: str = "") -> GlobalDescriptor:
    """Dispatch on aggregator tag: 'fisher', 'vlad' or 'softvlad(alpha)'."""
    if aggregator == "fisher":
        if not isinstance(vocab, DiagGmm):
            raise InputError("fisher aggregation needs a DiagGmm vocabulary")
        raw = fisher_vector(vocab, patches)
    elif aggregator == "vlad":
        if not isinstance(vocab, Codebook):
            raise InputError("vlad aggregation needs a k-means codebook")
        raw = vlad(vocab, patches)
    elif aggregator.startswith("softvlad(") and aggregator.endswith(")"):
        if not isinstance(vocab, Codebook):
            raise InputError("softvlad aggregation needs a k-means codebook")
        alpha = float(aggregator[len("softvlad(") : -1])
        raw = softvlad(vocab, patches, alpha)
    else:
        raise InputError(f"unknown aggregator {aggregator!r}")
    return power_l2_normalize(raw, aggregator=aggregator, vocab_digest=vocab_digest)


# ---------------------------------------------------------------------------
# descriptor store


@dataclass(frozen=True)
class DescriptorStore:
    ids: tuple
    matrix: np.ndarray  # (N, dim) float64 unit rows
    aggregator: str
    vocab_digest: str
    side: str = "drone"
    extractor: str = ""
    config_digest: str = ""

    def __len__(self) -> int:
        return len(self.ids)


def build_store(
    items: list[tuple[str, GlobalDescriptor]],
    side: str,
    extractor: str = "",
    config_digest: str = "",
) -> DescriptorStore:
    """Assemble a store, rejecting duplicate ids and mixed vocabularies."""
    if not items:
        raise InputError("empty descriptor store")
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate ids in descriptor store")
    tags = {(d.aggregator, d.vocab_digest) for _, d in items}
    if len(tags) > 1:
        raise DigestMismatchError(f"mixed aggregator/vocabulary tags in one store: {sorted(tags)}")
    aggregator, digest = next(iter(tags))
    matrix = np.stack([d.vector for _, d in items])
    return DescriptorStore(
        ids=tuple(ids),
        matrix=matrix,
        aggregator=aggregator,
        vocab_digest=digest,
        side=side,
        extractor=extractor,
        config_digest=config_digest,
    )


def save_store(store: DescriptorStore, path) -> None:
    n, dim = store.matrix.shape
    meta = json.dumps(
        {
            "ids": list(store.ids),
            "aggregator": store.aggregator,
            "vocab_digest": store.vocab_digest,
            "side": store.side,
            "extractor": store.extractor,
            "config_digest": store.config_digest,
        },
        sort_keys=True,
    ).encode("utf-8")
    blob = (
        _HEADER.pack(STORE_MAGIC, STORE_VERSION, n, dim)
        + np.ascontiguousarray(store.matrix, dtype="<f4").tobytes()
        + meta
    )
    Path(path).write_bytes(blob)


def load_store(path) -> DescriptorStore:
    blob = Path(path).read_bytes()
    magic, version, n, dim = _HEADER.unpack_from(blob, 0)
    if magic != STORE_MAGIC or version != STORE_VERSION:
        raise InputError(f"not an OGDS v{STORE_VERSION} file")
    off = _HEADER.size
    matrix = (
        np.frombuffer(blob, dtype="<f4", count=n * dim, offset=off)
        .astype(np.float64)
        .reshape(n, dim)
    )
    meta = json.loads(blob[off + 4 * n * dim :].decode("utf-8"))
    norms = np.linalg.norm(matrix, axis=1)
    if (norms == 0).any():
        raise InputError("zero descriptor row in store")
    matrix = matrix / norms[:, None]
    return DescriptorStore(
        ids=tuple(meta["ids"]),
        matrix=matrix,
        aggregator=str(meta["aggregator"]),
        vocab_digest=str(meta["vocab_digest"]),
        side=str(meta.get("side", "drone")),
        extractor=str(meta.get("extractor", "")),
        config_digest=str(meta.get("config_digest", "")),
    )
