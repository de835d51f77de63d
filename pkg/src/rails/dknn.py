"""Deep k-nearest-neighbors baseline with conformal credibility.

Per feature layer the k nearest reference points vote; the label maximizing
the summed per-layer vote counts wins (ties to the smallest class index).
Nonconformity of (x, c) is the total number of non-c votes across layers; a
calibration split turns that into a credibility p-value: the fraction of
calibration nonconformities at least as large as the query's.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .featmap import FeatureNetwork
from .flocking import Dataset, ReferenceFeatures, top_k_by_distance
from .numerics import affinities_to_point


@dataclass
class DkNNResult:
    label: int
    layer_counts: dict[int, np.ndarray]
    class_scores: np.ndarray
    nonconformity: float
    credibility: float | None


@dataclass
class CalibrationSet:
    """Held-out points with their true-label nonconformity scores."""

    vectors: np.ndarray
    labels: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def build(cls, vectors: np.ndarray, labels: np.ndarray, data: Dataset,
              net: FeatureNetwork, layers: Sequence[int], k: int,
              memory=None,
              features: ReferenceFeatures | None = None) -> "CalibrationSet":
        vectors = np.asarray(vectors, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise DataError("calibration vectors must be a non-empty matrix")
        if labels.shape != (vectors.shape[0],):
            raise DataError("calibration labels must align with vectors")
        if labels.min() < 0 or labels.max() >= data.class_count:
            raise DataError("calibration labels out of range")
        layers = _check_layers(layers)
        if features is None or not features.matches(data, memory, layers):
            features = ReferenceFeatures.build(data, net, layers, memory)
        scores = np.empty(vectors.shape[0])
        for i in range(vectors.shape[0]):
            counts = _vote_counts(vectors[i], net, layers, k, features,
                                  data.class_count)
            scores[i] = sum(k - c[labels[i]] for c in counts.values())
        return cls(vectors=vectors, labels=labels, scores=scores)


def _check_layers(layers: Sequence[int]) -> list[int]:
    out = sorted(set(int(l) for l in layers))
    if not out:
        raise ConfigError("need at least one feature layer")
    return out


def _vote_counts(x: np.ndarray, net: FeatureNetwork, layers: Sequence[int],
                 k: int, features: ReferenceFeatures,
                 class_count: int) -> dict[int, np.ndarray]:
    if k < 1:
        raise ConfigError("neighbor count k must be at least 1")
    pool = features.labels.shape[0]
    if k > pool:
        raise DataError(f"k={k} exceeds the {pool} reference points")
    query_feats = net.forward_activations(x, layers)
    ids = np.arange(pool)
    counts: dict[int, np.ndarray] = {}
    for layer in layers:
        dist = -affinities_to_point(features.features[layer],
                                    query_feats[layer])
        pick = top_k_by_distance(dist, ids, k)
        counts[layer] = np.bincount(features.labels[pick],
                                    minlength=class_count)
    return counts


def dknn_predict(x: np.ndarray, data: Dataset, net: FeatureNetwork,
                 layers: Sequence[int], k: int,
                 calibration: CalibrationSet | None = None,
                 memory=None,
                 features: ReferenceFeatures | None = None) -> DkNNResult:
    """Layer-wise k-NN vote with optional conformal credibility.

    The reference pool is the dataset plus, when given, a memory bank; the
    same pool flocking uses.  Credibility is computed only when a
    calibration set is given.
    """
    layers = _check_layers(layers)
    if features is None or not features.matches(data, memory, layers):
        features = ReferenceFeatures.build(data, net, layers, memory)
    x = np.asarray(x, dtype=np.float64)
    counts = _vote_counts(x, net, layers, k, features, data.class_count)
    summed = np.zeros(data.class_count, dtype=np.int64)
    for c in counts.values():
        summed += c
    label = int(np.argmax(summed))
    alpha = float(sum(k - c[label] for c in counts.values()))
    cred = None
    if calibration is not None:
        if len(calibration) == 0:
            raise DataError("calibration set is empty")
        cred = float(np.mean(calibration.scores >= alpha))
    return DkNNResult(
        label=label,
        layer_counts=counts,
        class_scores=summed / (k * len(layers)),
        nonconformity=alpha,
        credibility=cred)


def credibility(x: np.ndarray, data: Dataset, net: FeatureNetwork,
                layers: Sequence[int], k: int, calibration: CalibrationSet,
                features: ReferenceFeatures | None = None) -> float:
    """Conformal p-value of the DkNN-predicted label for x."""
    res = dknn_predict(x, data, net, layers, k, calibration,
                       features=features)
    assert res.credibility is not None
    return res.credibility
