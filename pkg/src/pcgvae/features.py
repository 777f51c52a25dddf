"""Frozen-latent features and crop/record level decisions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocessing import CLASSES
from .svm import SvmModel, svm_train

STD_FLOOR = 1e-8


def fft_features(latent) -> np.ndarray:
    """Per-channel rFFT magnitudes, channels concatenated.

    Accepts one code ``[channels, T_z]`` or a stack ``[n, channels, T_z]``.
    """
    z = np.asarray(latent, dtype=np.float64)
    spec = np.abs(np.fft.rfft(z, axis=-1))
    return spec.reshape(spec.shape[:-2] + (-1,))


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, d) -> Scaler:
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))


def fit_scaler(X) -> Scaler:
    X = np.asarray(X, dtype=np.float64)
    return Scaler(X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR))


def apply_scaler(scaler: Scaler, X) -> np.ndarray:
    return scaler.apply(X)


def default_gamma(X) -> float:
    X = np.asarray(X, dtype=np.float64)
    var = X.var()
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0


def train_one_vs_rest(X, labels, C: float, gamma: float, tol: float = 1e-3) -> dict[str, SvmModel]:
    labels = np.asarray(labels)
    return {cls: svm_train(X, np.where(labels == cls, 1.0, -1.0), C=C, gamma=gamma, tol=tol, positive_class=cls)
            for cls in CLASSES}


def ovr_scores(models: dict[str, SvmModel], X) -> np.ndarray:
    """Decision scores ``[n, 3]`` in class order Normal, Murmur, Extrasystole."""
    return np.stack([models[c].decision(X) for c in CLASSES], axis=1)


def multiclass_predict(models: dict[str, SvmModel], X) -> np.ndarray:
    """Largest one-vs-rest score; exact ties go to the earlier class."""
    return np.asarray(CLASSES)[np.argmax(ovr_scores(models, X), axis=1)]


def anomaly_score(scores) -> np.ndarray:
    """max(Murmur, Extrasystole) score minus the Normal score."""
    s = np.asarray(scores)
    return np.maximum(s[..., 1], s[..., 2]) - s[..., 0]


def majority_vote(predictions, scores) -> str:
    """Modal class over a record's crops.

    A tie between classes is settled by the larger summed decision score
    among the tied classes.
    """
    predictions = list(predictions)
    scores = np.asarray(scores, dtype=np.float64).reshape(len(predictions), len(CLASSES))
    counts = {c: predictions.count(c) for c in CLASSES}
    top = max(counts.values())
    tied = [c for c in CLASSES if counts[c] == top]
    if len(tied) == 1:
        return tied[0]
    summed = scores.sum(axis=0)
    return max(tied, key=lambda c: summed[CLASSES.index(c)])
