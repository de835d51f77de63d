"""End-to-end robust prediction: sense, flock, expand, mature, vote.

rails_predict runs the full pipeline for one query.  The DkNN sensing pass
is advisory: its label and credibility are attached to the prediction but
never gate the pipeline.  All randomness is derived from (seed, query_id),
so repeating a call reproduces the prediction bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dknn import CalibrationSet, dknn_predict
from .errors import ConfigError, DataError
from .expansion import ExpansionConfig, expand
from .featmap import FeatureNetwork
from .flocking import Dataset, ReferenceFeatures, flock
from .maturation import (MaturationResult, RailsPrediction, consensus,
                         select_plasma_memory)
from .numerics import derive_stream


@dataclass
class RailsConfig:
    """Knobs for the whole pipeline.

    temperature may be a scalar, a sequence aligned with the resolved layer
    list, or a mapping from layer index to value.  layers=None means the
    input plus every hidden layer of the network.
    """

    neighbors_per_class: int = 5
    layers: Sequence[int] | None = None
    population_size: int = 1000
    max_generations: int = 50
    mutation_prob: float = 0.15
    mutation_min: float = 0.05
    mutation_max: float = 0.15
    temperature: float | Sequence[float] | Mapping[int, float] = 1.0
    crossover_mode: str = "literal"
    plasma_fraction: float = 0.05
    memory_fraction: float = 0.25
    early_stop: bool = True
    early_stop_fraction: float = 1.0
    dknn_neighbors: int = 10
    seed: int = 0

    def resolve_layers(self, net: FeatureNetwork) -> tuple[int, ...]:
        if self.layers is None:
            return net.feature_layers()
        out = tuple(sorted(set(int(l) for l in self.layers)))
        if not out:
            raise ConfigError("layers must not be empty")
        if out[0] < 0 or out[-1] > net.depth:
            raise ConfigError(
                f"layers must lie in [0, {net.depth}], got {list(out)}")
        return out

    def temperature_for(self, layer: int, layers: Sequence[int]) -> float:
        t = self.temperature
        if isinstance(t, Mapping):
            if layer not in t:
                raise ConfigError(f"no temperature for layer {layer}")
            return float(t[layer])
        if isinstance(t, (int, float)):
            return float(t)
        values = list(t)
        if len(values) != len(layers):
            raise ConfigError(
                f"temperature list has {len(values)} entries for "
                f"{len(layers)} layers")
        return float(values[list(layers).index(layer)])

    def expansion_config(self, layer: int,
                         layers: Sequence[int]) -> ExpansionConfig:
        cfg = ExpansionConfig(
            population_size=self.population_size,
            max_generations=self.max_generations,
            mutation_prob=self.mutation_prob,
            mutation_min=self.mutation_min,
            mutation_max=self.mutation_max,
            temperature=self.temperature_for(layer, layers),
            crossover_mode=self.crossover_mode,
            early_stop=self.early_stop,
            early_stop_fraction=self.early_stop_fraction)
        cfg.validate()
        return cfg

    def validate(self, net: FeatureNetwork | None = None) -> None:
        if self.neighbors_per_class < 1:
            raise ConfigError("neighbors_per_class must be at least 1")
        if self.dknn_neighbors < 1:
            raise ConfigError("dknn_neighbors must be at least 1")
        if not 0.0 < self.plasma_fraction <= self.memory_fraction <= 1.0:
            raise ConfigError(
                "need 0 < plasma_fraction <= memory_fraction <= 1")
        layers = (self.resolve_layers(net) if net is not None
                  else tuple(self.layers or ()))
        for layer in layers:
            self.expansion_config(layer, layers)


def rails_predict(x: np.ndarray, data: Dataset, net: FeatureNetwork,
                  cfg: RailsConfig, query_id: int = 0, memory=None,
                  calibration: CalibrationSet | None = None,
                  features: ReferenceFeatures | None = None,
                  ) -> RailsPrediction:
    """Classify one query with the full immune pipeline.

    memory is an optional MemoryBank whose entries join the training data as
    flocking candidates.  calibration enables the advisory DkNN sensing
    pass.  features may carry a prebuilt ReferenceFeatures cache over
    data + memory; it is rebuilt when it does not match.
    """
    cfg.validate(net)
    if net.class_count != data.class_count:
        raise DataError(
            f"network predicts {net.class_count} classes, dataset has "
            f"{data.class_count}")
    layers = cfg.resolve_layers(net)
    x = np.asarray(x, dtype=np.float64)

    if features is None or not features.matches(data, memory, layers):
        features = ReferenceFeatures.build(data, net, layers, memory)

    dknn_label = None
    dknn_cred = None
    if calibration is not None:
        sensed = dknn_predict(x, data, net, layers, cfg.dknn_neighbors,
                              calibration, memory=memory, features=features)
        dknn_label = sensed.label
        dknn_cred = sensed.credibility

    flocked = flock(x, data, net, layers, cfg.neighbors_per_class,
                    memory=memory, features=features)

    plasma_by_layer = {}
    memory_by_layer = {}
    final_generation = {}
    traces = {}
    for layer in layers:
        rng = derive_stream(cfg.seed, query_id, f"expansion-layer-{layer}")
        neighbor_sets = [flocked[(layer, c)] for c in range(data.class_count)]
        pop, trace = expand(x, neighbor_sets, net, layer,
                            cfg.expansion_config(layer, layers), rng)
        plasma, mem = select_plasma_memory(pop, cfg.plasma_fraction,
                                           cfg.memory_fraction)
        plasma_by_layer[layer] = plasma
        memory_by_layer[layer] = mem
        final_generation[layer] = pop.generation
        traces[layer] = trace

    prediction = consensus(plasma_by_layer, data.class_count)
    prediction.traces = traces
    prediction.maturation = MaturationResult(
        query_id=query_id,
        plasma=plasma_by_layer,
        memory=memory_by_layer,
        final_generation=final_generation)
    prediction.dknn_label = dknn_label
    prediction.dknn_credibility = dknn_cred
    return prediction
