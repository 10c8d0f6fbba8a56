"""Cosine-similarity galleries and the R@1 / AP evaluation protocol.

Rankings use exact exhaustive inner products (gallery descriptors are unit
vectors), descending score with ascending-id tie-break; self-matches (same id
on both sides) are excluded during evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DigestMismatchError, InputError
from .fisher_agg import DescriptorStore, GlobalDescriptor


@dataclass(frozen=True)
class Gallery:
    ids: tuple
    matrix: np.ndarray  # (N, dim) unit rows
    side: str
    aggregator: str
    vocab_digest: str

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise InputError("gallery ids are not unique")
        norms = np.linalg.norm(self.matrix, axis=1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise InputError("gallery rows are not unit norm within 1e-6")

    @staticmethod
    def from_store(store: DescriptorStore) -> "Gallery":
        return Gallery(
            ids=store.ids,
            matrix=store.matrix,
            side=store.side,
            aggregator=store.aggregator,
            vocab_digest=store.vocab_digest,
        )


def rank(query: GlobalDescriptor, gallery: Gallery) -> list[tuple[str, float]]:
    """Full gallery ranking by inner product, ties broken by ascending id."""
    if (query.aggregator, query.vocab_digest) != (gallery.aggregator, gallery.vocab_digest):
        raise DigestMismatchError(
            f"query tags {(query.aggregator, query.vocab_digest)} != "
            f"gallery tags {(gallery.aggregator, gallery.vocab_digest)}"
        )
    scores = gallery.matrix @ query.vector
    ids = np.asarray(gallery.ids)
    order = np.lexsort((ids, -scores))
    return [(str(ids[i]), float(scores[i])) for i in order]


def validate_ground_truth(gt: dict, gallery_ids) -> None:
    known = set(gallery_ids)
    for q, correct in gt.items():
        if not correct:
            raise InputError(f"empty correct set for query {q!r}")
        missing = set(correct) - known
        if missing:
            raise InputError(f"ground truth for {q!r} references unknown gallery ids {sorted(missing)}")


def recall_at_k(rankings: dict, gt: dict, k: int = 1) -> float:
    """Fraction of queries with at least one correct id in the top k."""
    if not rankings:
        raise InputError("no rankings")
    hits = 0
    for q, ranked in rankings.items():
        if q not in gt:
            raise InputError(f"missing ground truth for query {q!r}")
        correct = set(gt[q])
        top = [rid for rid, _ in ranked[:k]]
        hits += any(rid in correct for rid in top)
    return hits / len(rankings)


def average_precision(ranked_ids, correct_set) -> float:
    """Standard multi-match AP: mean over correct hits of precision at the hit."""
    correct = set(correct_set)
    if not correct:
        raise InputError("empty correct set")
    found = 0
    total = 0.0
    for r, rid in enumerate(ranked_ids, start=1):
        if rid in correct:
            found += 1
            total += found / r
    return total / len(correct)


def evaluate(
    queries: list[tuple[str, GlobalDescriptor]],
    gallery: Gallery,
    gt: dict,
    exclude_self: bool = True,
) -> dict:
    """R@1 and mean AP for one retrieval direction."""
    validate_ground_truth(gt, gallery.ids)
    per_query = []
    for qid, desc in queries:
        if qid not in gt:
            raise InputError(f"missing ground truth for query {qid!r}")
        ranked = rank(desc, gallery)
        if exclude_self:
            ranked = [(rid, s) for rid, s in ranked if rid != qid]
        ranked_ids = [rid for rid, _ in ranked]
        correct = set(gt[qid])
        per_query.append(
            {
                "query": qid,
                "top1": ranked_ids[0] if ranked_ids else None,
                "hit_at_1": bool(ranked_ids and ranked_ids[0] in correct),
                "ap": average_precision(ranked_ids, correct),
            }
        )
    n = len(per_query)
    return {
        "n_queries": n,
        "recall_at_1": sum(p["hit_at_1"] for p in per_query) / n,
        "mean_ap": sum(p["ap"] for p in per_query) / n,
        "per_query": per_query,
    }


def format_report(d2s: dict | None, s2d: dict | None) -> str:
    """Plain-text table mirroring the two-direction R@1/AP column layout."""
    lines = [
        f"{'direction':<22}{'R@1':>8}{'AP':>8}",
        "-" * 38,
    ]
    if d2s is not None:
        lines.append(f"{'drone->satellite':<22}{100 * d2s['recall_at_1']:>8.2f}{100 * d2s['mean_ap']:>8.2f}")
    if s2d is not None:
        lines.append(f"{'satellite->drone':<22}{100 * s2d['recall_at_1']:>8.2f}{100 * s2d['mean_ap']:>8.2f}")
    return "\n".join(lines)
