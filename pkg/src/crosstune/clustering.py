"""Cross-event face clustering driven by feature distance and event attendance.

Two face samples are compared with a log-likelihood style score::

    beta * (sum(min(u_k, u_p)) - sum(max(u_k, u_p))) - ||z_i - z_j||^2

where ``u_k``/``u_p`` are the attendance vectors of the events the samples
were captured in. Samples are then grouped with average-linkage
agglomerative clustering on the negated score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform
from sklearn.base import BaseEstimator, ClusterMixin

from .core import DimensionError, fuzzy_overlap


@dataclass(frozen=True)
class ClusterSet:
    g: int
    membership: np.ndarray

    def members(self) -> list[np.ndarray]:
        order = np.argsort(self.membership, kind="stable")
        bounds = np.searchsorted(self.membership[order], np.arange(self.g + 1))
        return [order[bounds[c] : bounds[c + 1]] for c in range(self.g)]


def joint_log_similarity(z_i, z_j, u_k, u_p, beta: float) -> float:
    z_i = np.asarray(z_i, dtype=float)
    z_j = np.asarray(z_j, dtype=float)
    if z_i.shape != z_j.shape:
        raise DimensionError(f"feature vectors differ in shape: {z_i.shape} vs {z_j.shape}")
    inter, union = fuzzy_overlap(u_k, u_p)
    diff = z_i - z_j
    return beta * (inter - union) - float(diff @ diff)


def attendance_similarity(u: np.ndarray) -> np.ndarray:
    """h x h matrix of ``sum(min) - sum(max)`` between event attendance rows.

    Equals ``-sum(|u_k - u_p|)``, since min - max = -|a - b| elementwise.
    """
    u = np.asarray(u, dtype=float)
    h = u.shape[0]
    out = np.empty((h, h))
    for k in range(h):
        out[k] = -np.abs(u - u[k]).sum(axis=1)
    return out


def _squared_distances(Z: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", Z, Z)
    D = sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def similarity_matrix(features, event_index, attendance, beta: float) -> np.ndarray:
    """Dense n x n joint similarity; the diagonal is 0 by convention."""
    Z = np.asarray(features, dtype=float)
    ev = np.asarray(event_index, dtype=np.intp)
    if Z.ndim != 2 or ev.shape != (Z.shape[0],):
        raise DimensionError("features must be n x d with one event index per row")
    S = _squared_distances(Z)
    np.negative(S, out=S)
    if beta:
        A = attendance_similarity(attendance)
        S += beta * A[np.ix_(ev, ev)]
    np.fill_diagonal(S, 0.0)
    return S


def linkage_from_similarity(sim: np.ndarray) -> np.ndarray:
    """Average-linkage merge tree (scipy format) for a similarity matrix.

    Distances are ``max(sim) - sim``; average linkage is invariant to the
    constant shift, which only keeps the distances non-negative.
    """
    sim = np.asarray(sim, dtype=float)
    n = sim.shape[0]
    if n < 2:
        return np.zeros((0, 4))
    dist = squareform(sim, checks=False)
    np.negative(dist, out=dist)
    dist -= dist.min()
    return linkage(dist, method="average")


def cut_linkage(Z: np.ndarray, n: int, g: int) -> np.ndarray:
    """Replay the first ``n - g`` merges and return cluster labels in [0, g).

    Labels are numbered by the smallest sample index in each cluster.
    """
    if not 1 <= g <= n:
        raise ValueError(f"cannot cut {n} samples into {g} clusters")
    parent = np.arange(2 * n - 1)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for step in range(n - g):
        a, b = int(Z[step, 0]), int(Z[step, 1])
        parent[find(a)] = n + step
        parent[find(b)] = n + step
    roots = np.array([find(i) for i in range(n)])
    _, first, inverse = np.unique(roots, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.intp)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse]


def agglomerative_cluster(sim, g: int) -> ClusterSet:
    """Average-linkage clustering of a similarity matrix down to ``g`` clusters."""
    sim = np.asarray(sim, dtype=float)
    n = sim.shape[0]
    if sim.ndim != 2 or sim.shape != (n, n):
        raise ValueError("similarity matrix must be square")
    if not 1 <= g <= n:
        raise ValueError(f"g must lie in [1, n={n}], got {g}")
    if not np.allclose(sim, sim.T, rtol=0, atol=1e-12):
        raise ValueError("similarity matrix must be symmetric")
    Z = linkage_from_similarity(sim)
    return ClusterSet(g=g, membership=cut_linkage(Z, n, g))


class CrossModalAgglomerative(ClusterMixin, BaseEstimator):
    """Average-linkage clustering on the joint feature/attendance similarity.

    Parameters
    ----------
    n_clusters : int
        Target number of clusters ``g``.
    beta : float
        Weight of the attendance term; ``0`` gives plain feature clustering.
    """

    def __init__(self, n_clusters=2, beta=1.0):
        self.n_clusters = n_clusters
        self.beta = beta

    def fit(self, X, y=None, *, event_index=None, attendance=None):
        X = np.asarray(X, dtype=float)
        if event_index is None:
            event_index = np.zeros(X.shape[0], dtype=np.intp)
            attendance = np.zeros((1, 1))
        sim = similarity_matrix(X, event_index, attendance, self.beta)
        self.linkage_ = linkage_from_similarity(sim)
        self.labels_ = cut_linkage(self.linkage_, X.shape[0], self.n_clusters)
        self.n_features_in_ = X.shape[1]
        return self
