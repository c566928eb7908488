"""k-nearest-neighbour voting with deterministic tie handling."""
from __future__ import annotations

import numpy as np

METRICS = ("euclidean", "chi2")


def distances(train: np.ndarray, X: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """(n_query, n_train) squared Euclidean or chi-square distances."""
    X = np.atleast_2d(X)
    if metric not in METRICS:
        raise ValueError(f"unknown k-NN metric {metric!r}; choose from {METRICS}")
    train = np.asarray(train, dtype=np.float64)
    out = np.empty((len(X), len(train)))
    diff = np.empty_like(train)  # reused per query row; the full 3-D difference would not fit in memory
    for r, x in enumerate(X):
        np.subtract(train, x, out=diff)
        if metric == "euclidean":
            out[r] = np.einsum("ij,ij->i", diff, diff)
        else:
            s = train + x
            np.multiply(diff, diff, out=diff)
            out[r] = np.divide(diff, s, out=np.zeros_like(s), where=s > 0).sum(axis=1)
    return out


def knn_scores(train: np.ndarray, labels: np.ndarray, X: np.ndarray, k: int = 5,
               metric: str = "euclidean") -> np.ndarray:
    """Tumor fraction among the k nearest training rows (ties: lower index first)."""
    k = min(k, len(train))
    dist = distances(train, X, metric)
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return labels[nearest].sum(axis=1) / k
