"""Soft-margin RBF support vector machine trained by SMO."""

from __future__ import annotations

import base64
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class TrainingError(ValueError):
    pass


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(d2, 0.0))


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i for each support vector
    bias: float
    gamma: float
    C: float
    positive_class: str | None = None
    iterations: int = 0

    @property
    def alpha(self) -> np.ndarray:
        return np.abs(self.dual_coef)

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if len(self.support_vectors) == 0:
            return np.full(len(X), self.bias)
        return rbf_kernel(X, self.support_vectors, self.gamma) @ self.dual_coef + self.bias

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision(X) >= 0, 1, -1)

    def to_json(self) -> dict:
        sv = np.ascontiguousarray(self.support_vectors, dtype="<f8")
        return {
            "positive_class": self.positive_class,
            "C": self.C,
            "gamma": self.gamma,
            "bias": self.bias,
            "iterations": self.iterations,
            "n_support": int(sv.shape[0]),
            "dim": int(sv.shape[1]) if sv.ndim == 2 else 0,
            "dual_coef": self.dual_coef.tolist(),
            "support_vectors_b64": base64.b64encode(sv.tobytes()).decode("ascii"),
        }

    @classmethod
    def from_json(cls, d: dict) -> SvmModel:
        sv = np.frombuffer(base64.b64decode(d["support_vectors_b64"]), dtype="<f8").reshape(d["n_support"], d["dim"])
        return cls(sv.copy(), np.asarray(d["dual_coef"], dtype=np.float64), float(d["bias"]), float(d["gamma"]),
                   float(d["C"]), d.get("positive_class"), int(d.get("iterations", 0)))


def svm_train(X, y, C: float = 1.0, gamma: float = 1.0, tol: float = 1e-3, max_iter: int | None = None,
              positive_class: str | None = None) -> SvmModel:
    """Solve the RBF soft-margin dual with SMO.

    Working pairs are chosen by maximal violation with second-order
    information for the partner; iteration stops once the KKT gap is at
    most ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if set(np.unique(y)) != {-1.0, 1.0}:
        raise TrainingError("svm_train needs examples of both classes labelled -1 and +1")
    n = len(y)
    K = rbf_kernel(X, X, gamma)
    kdiag = np.diag(K).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of 0.5 a'Qa - e'a
    max_iter = max_iter or max(100_000, 100 * n)
    it = 0
    while it < max_iter:
        myG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        i = int(np.flatnonzero(up)[np.argmax(myG[up])])
        m = myG[i]
        M = myG[low].min()
        if m - M <= tol:
            break
        cand = low & (myG < m)
        b = m - myG[cand]
        a = kdiag[i] + kdiag[cand] - 2.0 * K[i, cand]
        a = np.where(a > 1e-12, a, 1e-12)
        idx = np.flatnonzero(cand)
        j = int(idx[np.argmin(-(b * b) / a)])
        bij = m - myG[j]
        aij = max(kdiag[i] + kdiag[j] - 2.0 * K[i, j], 1e-12)
        t = bij / aij
        t = min(t, C - alpha[i] if y[i] > 0 else alpha[i])
        t = min(t, alpha[j] if y[j] > 0 else C - alpha[j])
        di, dj = y[i] * t, -y[j] * t
        alpha[i] = min(max(alpha[i] + di, 0.0), C)
        alpha[j] = min(max(alpha[j] + dj, 0.0), C)
        G += y * (K[:, i] * (y[i] * di) + K[:, j] * (y[j] * dj))
        it += 1
    else:
        log.warning("SMO stopped after %d iterations without reaching tol=%g", max_iter, tol)

    free = (alpha > 0) & (alpha < C)
    myG = -y * G
    if free.any():
        bias = float(myG[free].mean())
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        hi = myG[up].max() if up.any() else 0.0
        lo = myG[low].min() if low.any() else 0.0
        bias = float((hi + lo) / 2)
    sv = alpha > 0
    model = SvmModel(X[sv].copy(), alpha[sv] * y[sv], bias, float(gamma), float(C), positive_class, it)
    return model


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    """``sum(alpha) - 0.5 (alpha*y)' K (alpha*y)``, to be maximised."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def full_alpha(model: SvmModel, X: np.ndarray) -> np.ndarray:
    """Dual variables for every row of ``X`` (zero for non-support vectors)."""
    X = np.asarray(X, dtype=np.float64)
    out = np.zeros(len(X))
    for sv, coef in zip(model.support_vectors, model.alpha):
        hit = np.flatnonzero(np.all(X == sv, axis=1))
        out[hit[0]] = coef
    return out
