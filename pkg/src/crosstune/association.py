"""Match face clusters to device identities by their event-presence signatures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import DimensionError


@dataclass(frozen=True)
class Assignment:
    cluster_to_identity: tuple[int | None, ...]
    total_cost: float

    def as_array(self) -> np.ndarray:
        """Identity per cluster, ``-1`` for clusters matched to a dummy."""
        return np.array([-1 if j is None else j for j in self.cluster_to_identity], dtype=int)


def cluster_event_vector(event_ids, h: int) -> np.ndarray:
    bits = np.zeros(h, dtype=np.int8)
    event_ids = np.asarray(event_ids, dtype=np.intp)
    if event_ids.size:
        if event_ids.min() < 0 or event_ids.max() >= h:
            raise ValueError(f"event ids must lie in [0, {h})")
        bits[event_ids] = 1
    return bits


def cluster_event_matrix(membership, event_index, g: int, h: int) -> np.ndarray:
    """g x h presence matrix; row c is the event vector of cluster c."""
    R = np.zeros((g, h), dtype=np.int8)
    R[np.asarray(membership), np.asarray(event_index)] = 1
    return R


def device_event_vector(attendance, identity: int, binarize_threshold: float = 0.5) -> np.ndarray:
    u = np.asarray(attendance, dtype=float)
    return (u[:, identity] >= binarize_threshold).astype(np.int8)


def device_event_matrix(attendance, binarize_threshold: float = 0.5) -> np.ndarray:
    """m x h presence matrix; row j is the event vector of identity j."""
    return (np.asarray(attendance, dtype=float) >= binarize_threshold).astype(np.int8).T


def assignment_cost(r_c, r_l) -> float:
    r_c = np.asarray(r_c, dtype=float)
    r_l = np.asarray(r_l, dtype=float)
    if r_c.shape != r_l.shape:
        raise DimensionError(f"event vectors differ in length: {r_c.shape} vs {r_l.shape}")
    d = r_c - r_l
    return float(d @ d)


def cost_matrix(R_clusters, R_devices) -> np.ndarray:
    """Pairwise squared distances between cluster and device event vectors."""
    Rc = np.asarray(R_clusters, dtype=float)
    Rl = np.asarray(R_devices, dtype=float)
    if Rc.shape[1] != Rl.shape[1]:
        raise DimensionError("cluster and device event vectors differ in length")
    sq_c = (Rc * Rc).sum(axis=1)
    sq_l = (Rl * Rl).sum(axis=1)
    C = sq_c[:, None] + sq_l[None, :] - 2.0 * (Rc @ Rl.T)
    return np.maximum(C, 0.0)


def hungarian_assign(cost) -> Assignment:
    """Minimum-cost injective map from identities (columns) into clusters (rows).

    The g x m matrix is padded with ``g - m`` zero-cost dummy identities to a
    square problem; clusters matched to a dummy come back as ``None``.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    g, m = cost.shape
    if g < m:
        raise ValueError(f"need at least as many clusters as identities (g={g}, m={m})")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    padded = np.zeros((g, g))
    padded[:, :m] = cost
    rows, cols = linear_sum_assignment(padded)
    mapping: list[int | None] = [None] * g
    total = 0.0
    for i, j in zip(rows, cols):
        if j < m:
            mapping[i] = int(j)
            total += cost[i, j]
    return Assignment(cluster_to_identity=tuple(mapping), total_cost=float(total))
