"""Random forest of Gini trees grown to purity on bootstrap samples."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .rng import XorShift64Star, derive_seed


@dataclass
class Tree:
    feature: np.ndarray     # -1 on leaves
    threshold: np.ndarray   # go left when x[feature] <= threshold
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray      # (n_nodes, 2) class counts of the training samples reaching the node

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return node

    def vote(self, X: np.ndarray) -> np.ndarray:
        """1 where the leaf majority is tumor (ties vote 0)."""
        c = self.counts[self.leaf_index(X)]
        return (c[:, 1] > c[:, 0]).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["counts"], dtype=np.int64).reshape(-1, 2),
        )


def _best_split(X: np.ndarray, y: np.ndarray, idx: np.ndarray, features: list[int]):
    """Lowest weighted Gini split of ``idx`` over ``features``.

    Returns ``(feature, threshold)`` or ``None`` when every candidate feature
    is constant on the node.  Ties keep the earlier feature, then the lower
    threshold.
    """
    sub = X[np.ix_(idx, features)]
    order = np.argsort(sub, axis=0, kind="stable")
    vals = np.take_along_axis(sub, order, axis=0)
    labels = y[idx][order]
    n = len(idx)
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    pos_left = np.cumsum(labels, axis=0)[:-1].astype(np.float64)
    pos_total = float(labels[:, 0].sum())
    n_right = n - n_left
    p_l = pos_left / n_left
    p_r = (pos_total - pos_left) / n_right
    impurity = n_left * 2.0 * p_l * (1.0 - p_l) + n_right * 2.0 * p_r * (1.0 - p_r)
    valid = vals[:-1] < vals[1:]
    if not valid.any():
        return None
    impurity = np.where(valid, impurity, np.inf)
    # column-major scan gives feature order first, then position
    flat = int(np.argmin(impurity.T))
    col, row = divmod(flat, n - 1)
    lo, hi = float(vals[row, col]), float(vals[row + 1, col])
    thr = (lo + hi) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return features[col], thr


def grow_tree(X: np.ndarray, y: np.ndarray, seed: int, max_features: int | None = None,
              bootstrap: bool = True) -> Tree:
    n, d = X.shape
    rng = XorShift64Star(seed)
    k = max_features or max(1, int(math.sqrt(d)))
    k = min(k, d)
    if bootstrap:
        sample = np.array([rng.below(n) for _ in range(n)], dtype=np.int64)
    else:
        sample = np.arange(n, dtype=np.int64)

    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        pos = int(y[idx].sum())
        counts.append((len(idx) - pos, pos))
        return len(feature) - 1

    stack = [(new_node(sample), sample)]
    while stack:
        node, idx = stack.pop()
        pos = counts[node][1]
        if pos == 0 or pos == len(idx):
            continue
        # partial Fisher-Yates: draw k features at a time until one splits
        perm = list(range(d))
        start = 0
        split = None
        while split is None and start < d:
            stop = min(start + k, d)
            for i in range(start, stop):
                j = i + rng.below(d - i)
                perm[i], perm[j] = perm[j], perm[i]
            split = _best_split(X, y, idx, perm[start:stop])
            start = stop
        if split is None:
            continue  # identical feature vectors with mixed labels
        f, thr = split
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        li = new_node(idx[go_left])
        ri = new_node(idx[~go_left])
        left[node], right[node] = li, ri
        stack.append((ri, idx[~go_left]))
        stack.append((li, idx[go_left]))

    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(counts, dtype=np.int64).reshape(-1, 2),
    )


def grow_forest(X: np.ndarray, y: np.ndarray, n_trees: int = 1000, seed: int = 0,
                max_features: int | None = None, threads: int = 1) -> list[Tree]:
    """Tree t is seeded from ``(seed, t)`` only, so the result does not depend on ``threads``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)

    def one(t):
        return grow_tree(X, y, derive_seed(seed, t), max_features)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, range(n_trees)))
    return [one(t) for t in range(n_trees)]


def forest_votes(trees: list[Tree], X: np.ndarray) -> np.ndarray:
    """Fraction of trees voting tumor, per row of X."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    total = np.zeros(len(X), dtype=np.int64)
    for t in trees:
        total += t.vote(X)
    return total / len(trees)
