"""RBF-kernel SVM trained by sequential minimal optimization.

Working pairs are the maximal violating pair (Keerthi et al.); each step is an
exact line search along the feasible direction, so the dual objective never
increases.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


@dataclass
class SvmState:
    support: np.ndarray     # support vectors, already standardized
    alpha: np.ndarray       # their dual coefficients, 0 < alpha <= C
    labels: np.ndarray      # +1 / -1
    bias: float
    gamma: float
    C: float
    mean: np.ndarray
    scale: np.ndarray
    objective: list = field(default_factory=list)
    iterations: int = 0

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        K = rbf_kernel(self.standardize(X), self.support, self.gamma)
        return K @ (self.alpha * self.labels) + self.bias


def smo(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3, max_iter: int = 100_000,
        track_objective: bool = True):
    """Solve ``min 1/2 a'Qa - sum(a)`` s.t. ``0 <= a <= C``, ``y'a = 0``.

    Returns ``(alpha, bias, objective_history, iterations)``.
    """
    n = len(y)
    y = y.astype(np.float64)
    alpha = np.zeros(n)
    grad = -np.ones(n)          # Q alpha - e
    diag = np.diag(K).copy()
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        minus_yg = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            break
        i = int(np.argmax(np.where(up, minus_yg, -np.inf)))
        j = int(np.argmin(np.where(low, minus_yg, np.inf)))
        gap = minus_yg[i] - minus_yg[j]
        if gap < tol:
            break
        eta = max(diag[i] + diag[j] - 2.0 * K[i, j], 1e-12)
        step = gap / eta
        lim_i = C - alpha[i] if y[i] > 0 else alpha[i]
        lim_j = alpha[j] if y[j] > 0 else C - alpha[j]
        step = min(step, lim_i, lim_j)
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        # pin values that reached a bound to it exactly
        for t, lim in ((i, lim_i), (j, lim_j)):
            if step == lim:
                alpha[t] = C if (t == i) == (y[t] > 0) else 0.0
        np.clip(alpha, 0.0, C, out=alpha)
        grad += step * y * (K[:, i] - K[:, j])
        if track_objective:
            history.append(0.5 * float(alpha @ (grad - 1.0)))
    minus_yg = -y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        bias = float(minus_yg[free].mean())
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        hi = minus_yg[up].max() if up.any() else 0.0
        lo = minus_yg[low].min() if low.any() else 0.0
        bias = float((hi + lo) / 2.0)
    return alpha, bias, history, it


def train_svm(X: np.ndarray, y01: np.ndarray, C: float = 10.0, gamma: float | None = None,
              tol: float = 1e-3, max_iter: int = 100_000, standardize: bool = True) -> SvmState:
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        mean = np.zeros(d)
        scale = np.ones(d)
    Z = (X - mean) / scale
    gamma = 1.0 / d if gamma is None else float(gamma)
    y = np.where(np.asarray(y01) > 0, 1.0, -1.0)
    K = rbf_kernel(Z, Z, gamma)
    alpha, bias, history, it = smo(K, y, C, tol, max_iter)
    sv = alpha > 0
    return SvmState(Z[sv], alpha[sv], y[sv], bias, gamma, float(C), mean, scale, history, it)
