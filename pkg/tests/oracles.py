"""Slow, loop-based reference implementations used as independent oracles."""

import math

import numpy as np


def loss_by_loops(X, Y, A, W, b, lam):
    """Composite adapter objective written out sample by sample."""
    n, m = len(X), len(W)
    Z = []
    for x in X:
        v = [sum(A[r][c] * x[c] for c in range(len(x))) for r in range(len(A))]
        norm = math.sqrt(sum(t * t for t in v))
        Z.append([t / norm for t in v])
    ce = 0.0
    for i in range(n):
        logits = [b[k] + sum(W[k][r] * Z[i][r] for r in range(len(Z[i]))) for k in range(m)]
        top = max(logits)
        lse = top + math.log(sum(math.exp(t - top) for t in logits))
        ce -= sum(Y[i][k] * (logits[k] - lse) for k in range(m))
    stoc = 0.0
    for k in range(m):
        mass = sum(Y[i][k] for i in range(n))
        if mass == 0:
            continue
        center = [sum(Y[i][k] * Z[i][r] for i in range(n)) / mass for r in range(len(Z[0]))]
        for i in range(n):
            stoc += Y[i][k] * sum((Z[i][r] - center[r]) ** 2 for r in range(len(center)))
    return ce + lam * stoc


def naive_average_linkage(sim, g):
    """Textbook O(n^3) average linkage on a similarity matrix.

    Merges the pair of clusters with the highest mean pairwise similarity;
    ties go to the lexicographically smallest (min member, min member) pair.
    """
    n = len(sim)
    clusters = [[i] for i in range(n)]
    while len(clusters) > g:
        best = None
        for a in range(len(clusters)):
            for c in range(a + 1, len(clusters)):
                s = sum(sim[i][j] for i in clusters[a] for j in clusters[c]) / (len(clusters[a]) * len(clusters[c]))
                key = (-s, min(clusters[a]), min(clusters[c]))
                if best is None or key < best[0]:
                    best = (key, a, c)
        _, a, c = best
        clusters[a] = clusters[a] + clusters[c]
        del clusters[c]
    labels = np.empty(n, dtype=int)
    for idx, members in enumerate(clusters):
        labels[members] = idx
    return labels


def same_partition(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.array_equal(a[:, None] == a[None, :], b[:, None] == b[None, :])
