"""Cluster-count sweep and soft-label voting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .association import cluster_event_matrix, cost_matrix, device_event_matrix, hungarian_assign
from .clustering import cut_linkage, linkage_from_similarity, similarity_matrix


@dataclass(frozen=True)
class SoftLabel:
    probs: np.ndarray
    vote_count: int

    @property
    def non_poi(self) -> bool:
        return self.vote_count == 0


def sweep_values(m: int, n: int, g_multipliers) -> list[int]:
    """Cluster counts ``k * m`` for each multiplier, clamped to ``n``."""
    return [min(k * m, n) for k in g_multipliers]


def sweep_and_vote(
    features,
    event_index,
    attendance,
    beta: float = 1.0,
    g_multipliers=(2, 3, 4, 5),
    binarize_threshold: float = 0.5,
) -> np.ndarray:
    """Per-sample vote tallies (n x m) over the cluster-count sweep.

    The average-linkage tree is built once and cut at every ``g``; cutting
    one tree gives the same partitions as re-clustering from scratch.
    """
    features = np.asarray(features, dtype=float)
    event_index = np.asarray(event_index, dtype=np.intp)
    attendance = np.asarray(attendance, dtype=float)
    n = features.shape[0]
    h, m = attendance.shape
    if m < 2:
        raise ValueError("need at least 2 identities")
    tallies = np.zeros((n, m), dtype=np.int64)
    if n == 0:
        return tallies

    sim = similarity_matrix(features, event_index, attendance, beta)
    tree = linkage_from_similarity(sim)
    del sim
    R_dev = device_event_matrix(attendance, binarize_threshold)
    for g in sweep_values(m, n, g_multipliers):
        if g < m:
            # too few samples to host every identity
            continue
        membership = cut_linkage(tree, n, g) if n > 1 else np.zeros(1, dtype=np.intp)
        R_cl = cluster_event_matrix(membership, event_index, g, h)
        assigned = hungarian_assign(cost_matrix(R_cl, R_dev)).as_array()
        ident = assigned[membership]
        voted = ident >= 0
        tallies[np.flatnonzero(voted), ident[voted]] += 1
    return tallies


def soft_label_matrix(tallies) -> np.ndarray:
    """Row-normalized tallies; rows with no votes stay all-zero."""
    tallies = np.asarray(tallies, dtype=float)
    totals = tallies.sum(axis=1, keepdims=True)
    return np.divide(tallies, totals, out=np.zeros_like(tallies), where=totals > 0)


def soft_labels(tallies) -> list[SoftLabel]:
    tallies = np.asarray(tallies)
    probs = soft_label_matrix(tallies)
    return [SoftLabel(probs=p, vote_count=int(t.sum())) for p, t in zip(probs, tallies)]


def harden(soft) -> int | None:
    """Arg-max identity of a soft label (lowest index wins ties), None without votes."""
    probs = soft.probs if isinstance(soft, SoftLabel) else np.asarray(soft, dtype=float)
    if isinstance(soft, SoftLabel) and soft.vote_count == 0:
        return None
    if not np.any(probs > 0):
        return None
    return int(np.argmax(probs))


def harden_matrix(probs) -> np.ndarray:
    """Vectorized :func:`harden`; ``-1`` marks rows without votes."""
    probs = np.asarray(probs, dtype=float)
    out = np.argmax(probs, axis=1)
    out[~np.any(probs > 0, axis=1)] = -1
    return out
