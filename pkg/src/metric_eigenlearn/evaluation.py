"""Clustering-quality scores for distance matrices and a Euclidean baseline."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import SAMPLES, Dataset, check_side
from .errors import DegenerateClusters, DimensionMismatch, SingleClass


@dataclass(frozen=True)
class LabeledDistances:
    D: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        D = np.asarray(self.D, dtype=float)
        labels = np.asarray(self.labels)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise DimensionMismatch(f"distance matrix must be square, got {D.shape}")
        if labels.shape != (D.shape[0],):
            raise DimensionMismatch(f"{labels.size} labels for {D.shape[0]} points")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "labels", labels)

    @property
    def classes(self):
        return np.unique(self.labels)

    @property
    def class_sizes(self):
        return {c: int(np.sum(self.labels == c)) for c in self.classes}


def _as_labeled(D, labels=None):
    if isinstance(D, LabeledDistances):
        return D
    return LabeledDistances(D, labels)


def silhouette_samples(D, labels=None) -> np.ndarray:
    """Per-sample silhouette ``(b - a) / max(a, b)``.

    Members of singleton classes get 0, as does any sample with
    ``max(a, b) = 0``.
    """
    ld = _as_labeled(D, labels)
    classes, inv, counts = np.unique(ld.labels, return_inverse=True, return_counts=True)
    if classes.size < 2:
        raise SingleClass("the silhouette needs at least two classes")
    onehot = np.zeros((len(inv), classes.size))
    onehot[np.arange(len(inv)), inv] = 1.0
    sums = ld.D @ onehot  # distance from each sample to every class, summed
    own = counts[inv]
    idx = np.arange(len(inv))
    a = np.where(own > 1, sums[idx, inv] / np.maximum(own - 1, 1), 0.0)
    means = sums / counts[None, :]
    means[idx, inv] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    return np.where(own > 1, s, 0.0)


def asw(D, labels=None) -> float:
    """Average silhouette width, in [-1, 1]."""
    return float(np.mean(silhouette_samples(D, labels)))


def dunn_index(D, labels=None) -> float:
    """Smallest between-class distance over largest within-class distance.

    Returns ``inf`` with a :class:`DegenerateClusters` warning when every
    within-class distance is zero.
    """
    ld = _as_labeled(D, labels)
    if ld.classes.size < 2:
        raise SingleClass("the Dunn index needs at least two classes")
    same = ld.labels[:, None] == ld.labels[None, :]
    off = ~np.eye(len(ld.labels), dtype=bool)
    d_min = float(np.min(ld.D[~same]))
    intra = ld.D[same & off]
    d_max = float(np.max(intra)) if intra.size else 0.0
    if d_max == 0.0:
        warnings.warn("all within-class distances are zero", DegenerateClusters, stacklevel=2)
        return math.inf
    return d_min / d_max


def euclidean_baseline(data: Dataset, side: str = SAMPLES) -> np.ndarray:
    """Pairwise Euclidean distances between the raw points of ``side``."""
    V = data.vectors(check_side(side), normalized=False)
    N = V.shape[0]
    iu, ju = np.triu_indices(N, 1)
    diff = V[iu] - V[ju]
    d = np.sqrt(np.einsum("pd,pd->p", diff, diff))
    D = np.zeros((N, N))
    D[iu, ju] = d
    D[ju, iu] = d
    return D
