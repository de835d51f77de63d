"""Per-class nearest-neighbor recruitment over network feature layers.

For a query x, each (layer, class) pair gets the k candidates of that class
whose layer-l features are nearest to the query's.  Candidates are the
training set plus, optionally, a memory bank; neighbors keep their original
input-space vectors so later stages can evolve them.

Ordering is fully deterministic: distance ascending, then training entries
before memory entries, then lower original index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .featmap import FeatureNetwork
from .numerics import affinities_to_point


@dataclass
class Dataset:
    """Labeled vectors in [0,1]^d with a fixed class universe."""

    vectors: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_count = int(self.class_count)
        if self.vectors.ndim != 2:
            raise DataError("dataset vectors must be a (n, d) matrix")
        if self.labels.shape != (self.vectors.shape[0],):
            raise DataError("dataset labels must align with vectors")
        if self.class_count < 2:
            raise DataError("dataset needs at least two classes")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.class_count):
            raise DataError(
                f"labels must lie in [0, {self.class_count}), "
                f"found range [{self.labels.min()}, {self.labels.max()}]")
        if not np.all(np.isfinite(self.vectors)):
            raise DataError("dataset vectors contain non-finite values")
        if self.vectors.size and (self.vectors.min() < 0.0
                                  or self.vectors.max() > 1.0):
            raise DataError("dataset vectors must lie in [0, 1]")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def class_indices(self, label: int) -> np.ndarray:
        return np.nonzero(self.labels == label)[0]

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def take(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.vectors[indices], self.labels[indices],
                       self.class_count)


@dataclass
class NeighborSet:
    """k recruited neighbors for one (layer, class): input-space vectors,
    affinities at that layer (descending), and global candidate ids
    (training index, or len(train) + memory index)."""

    layer: int
    class_label: int
    vectors: np.ndarray
    affinities: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return self.vectors.shape[0]


class ReferenceFeatures:
    """Cached per-layer features for the candidate pool (train + memory).

    flock() and the DkNN predictor recompute these per call unless handed a
    cache; building one per evaluation batch is the difference between
    minutes and hours on image-sized data.
    """

    def __init__(self, features: dict[int, np.ndarray], labels: np.ndarray,
                 vectors: np.ndarray, n_train: int):
        self.features = features
        self.labels = labels
        self.vectors = vectors
        self.n_train = n_train

    @classmethod
    def build(cls, data: Dataset, net: FeatureNetwork,
              layers: Sequence[int], memory=None) -> "ReferenceFeatures":
        vectors = data.vectors
        labels = data.labels
        if memory is not None and len(memory) > 0:
            if memory.dim != data.dim:
                raise DataError(
                    f"memory dimension {memory.dim} does not match dataset "
                    f"dimension {data.dim}")
            vectors = np.vstack([vectors, memory.vectors])
            labels = np.concatenate([labels, memory.labels])
        feats = net.forward_activations(vectors, layers)
        return cls(feats, labels, vectors, len(data))

    def matches(self, data: Dataset, memory, layers: Sequence[int]) -> bool:
        total = len(data) + (len(memory) if memory is not None else 0)
        return (self.n_train == len(data)
                and self.labels.shape[0] == total
                and all(l in self.features for l in layers))


def top_k_by_distance(distances: np.ndarray, ids: np.ndarray,
                      k: int) -> np.ndarray:
    """Positions of the k nearest candidates, deterministic under ties.

    Ties at the k-th distance are broken by ascending global id, which puts
    training entries ahead of memory entries and lower indices first.
    """
    m = distances.shape[0]
    if k > m:
        raise DataError(f"asked for {k} neighbors from {m} candidates")
    if k < m:
        # keep every candidate tied at the k-th distance, then sort exactly
        thresh = np.partition(distances, k - 1)[k - 1]
        keep = np.nonzero(distances <= thresh)[0]
    else:
        keep = np.arange(m)
    order = np.lexsort((ids[keep], distances[keep]))
    return keep[order[:k]]


def flock(x: np.ndarray, data: Dataset, net: FeatureNetwork,
          layers: Sequence[int], k: int, memory=None,
          features: ReferenceFeatures | None = None,
          ) -> Mapping[tuple[int, int], NeighborSet]:
    """Recruit the k nearest same-class candidates per (layer, class).

    Returns a dict keyed by (layer, class).  Raises DataError when any class
    has fewer than k candidates in train + memory.
    """
    if k < 1:
        raise ConfigError("neighbor count k must be at least 1")
    layers = sorted(set(int(l) for l in layers))
    if features is None or not features.matches(data, memory, layers):
        features = ReferenceFeatures.build(data, net, layers, memory)

    counts = np.bincount(features.labels, minlength=data.class_count)
    short = [c for c in range(data.class_count) if counts[c] < k]
    if short:
        raise DataError(
            f"classes {short} have fewer than k={k} candidates "
            f"(counts {[int(counts[c]) for c in short]})")

    x = np.asarray(x, dtype=np.float64)
    query_feats = net.forward_activations(x, layers)
    class_ids = [np.nonzero(features.labels == c)[0]
                 for c in range(data.class_count)]

    out: dict[tuple[int, int], NeighborSet] = {}
    for layer in layers:
        ref = features.features[layer]
        fx = query_feats[layer]
        for c in range(data.class_count):
            ids = class_ids[c]
            aff = affinities_to_point(ref[ids], fx)
            pick = top_k_by_distance(-aff, ids, k)
            chosen = ids[pick]
            out[(layer, c)] = NeighborSet(
                layer=layer,
                class_label=c,
                vectors=features.vectors[chosen].copy(),
                affinities=aff[pick],
                indices=chosen)
    return out
