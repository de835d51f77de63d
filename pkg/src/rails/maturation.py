"""Affinity maturation: harvest plasma and memory elites, vote a label.

From each final population the top ceil(plasma_fraction * T) members by
affinity become plasma cells and the top ceil(memory_fraction * T) become
memory cells (plasma is a prefix of memory when the fractions are ordered).
The predicted label is the majority vote over plasma pooled across layers;
confidence is the winning vote share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, DataError
from .expansion import GenerationTrace, Population


@dataclass
class SelectedData:
    """Members harvested from one population, ordered by descending affinity."""

    vectors: np.ndarray
    labels: np.ndarray
    affinities: np.ndarray
    member_indices: np.ndarray

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass
class MaturationResult:
    """Per-layer plasma and memory harvest for one query."""

    query_id: int
    plasma: dict[int, SelectedData]
    memory: dict[int, SelectedData]
    final_generation: dict[int, int]


@dataclass
class RailsPrediction:
    label: int
    confidence: float
    votes: np.ndarray
    traces: dict[int, GenerationTrace] = field(default_factory=dict)
    maturation: MaturationResult | None = None
    dknn_label: int | None = None
    dknn_credibility: float | None = None


def select_plasma_memory(population: Population, plasma_fraction: float,
                         memory_fraction: float,
                         ) -> tuple[SelectedData, SelectedData]:
    """Split the affinity-ranked population into plasma and memory elites.

    Ties in affinity resolve to the lower member index, so the harvest is
    deterministic.  Requires 0 < plasma_fraction <= memory_fraction <= 1.
    """
    if not 0.0 < plasma_fraction <= memory_fraction <= 1.0:
        raise ConfigError(
            "need 0 < plasma_fraction <= memory_fraction <= 1, got "
            f"{plasma_fraction} and {memory_fraction}")
    size = len(population)
    if size == 0:
        raise DataError("cannot select from an empty population")
    order = np.lexsort((np.arange(size), -population.affinities))

    def harvest(count: int) -> SelectedData:
        idx = order[:count]
        return SelectedData(
            vectors=population.vectors[idx].copy(),
            labels=population.labels[idx].copy(),
            affinities=population.affinities[idx].copy(),
            member_indices=idx.copy())

    n_plasma = math.ceil(plasma_fraction * size)
    n_memory = math.ceil(memory_fraction * size)
    return harvest(n_plasma), harvest(n_memory)


def consensus(plasma_by_layer: Mapping[int, SelectedData],
              class_count: int) -> RailsPrediction:
    """Majority vote over plasma cells pooled across layers.

    Ties go to the smallest class index.  Confidence is the winning class's
    share of all plasma votes.
    """
    if not plasma_by_layer:
        raise DataError("consensus needs plasma from at least one layer")
    if class_count < 2:
        raise DataError("consensus needs at least two classes")
    pooled = np.concatenate(
        [plasma_by_layer[l].labels for l in sorted(plasma_by_layer)])
    if pooled.size == 0:
        raise DataError("consensus received empty plasma sets")
    if pooled.min() < 0 or pooled.max() >= class_count:
        raise DataError("plasma labels out of range")
    votes = np.bincount(pooled, minlength=class_count)
    label = int(np.argmax(votes))
    return RailsPrediction(
        label=label,
        confidence=float(votes[label] / pooled.size),
        votes=votes)
