"""Clonal expansion: evolve neighbor clones toward the query in feature space.

Each (query, layer) pair gets its own population.  Members are input-space
vectors carrying the class label of the neighbor they descend from; fitness
is the affinity to the query at the given feature layer.  One generation is
fitness-proportional (softmax) parent selection, per-entry crossover with a
same-class mate, then per-entry mutation with clipping to [0, 1].  The whole
population is replaced every generation; labels pass from the first parent
unchanged.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .featmap import FeatureNetwork
from .flocking import NeighborSet
from .numerics import affinities_to_point

CROSSOVER_MODES = ("literal", "inverted")


@dataclass
class ExpansionConfig:
    population_size: int = 1000
    max_generations: int = 50
    mutation_prob: float = 0.15
    mutation_min: float = 0.05
    mutation_max: float = 0.15
    temperature: float = 1.0
    crossover_mode: str = "literal"
    early_stop: bool = True
    early_stop_fraction: float = 1.0

    def validate(self) -> None:
        if self.population_size < 1:
            raise ConfigError("population_size must be at least 1")
        if self.max_generations < 1:
            raise ConfigError("max_generations must be at least 1")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ConfigError("mutation_prob must lie in [0, 1]")
        if not 0.0 < self.mutation_min <= self.mutation_max:
            raise ConfigError("need 0 < mutation_min <= mutation_max")
        if self.temperature <= 0.0:
            raise ConfigError("temperature must be positive")
        if self.crossover_mode not in CROSSOVER_MODES:
            raise ConfigError(
                f"crossover_mode must be one of {CROSSOVER_MODES}, "
                f"got {self.crossover_mode!r}")
        if not 0.0 < self.early_stop_fraction <= 1.0:
            raise ConfigError("early_stop_fraction must lie in (0, 1]")


@dataclass
class Population:
    """One generation: vectors (T, d), inherited labels, affinities to the query."""

    vectors: np.ndarray
    labels: np.ndarray
    affinities: np.ndarray
    generation: int

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise DataError("population vectors must be a (T, d) matrix")
        n = self.vectors.shape[0]
        if self.labels.shape != (n,) or self.affinities.shape != (n,):
            raise DataError("population labels/affinities must align with vectors")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def member(self, index: int) -> "PopulationMember":
        return PopulationMember(
            vector=self.vectors[index],
            label=int(self.labels[index]),
            affinity=float(self.affinities[index]),
            index=int(index))


@dataclass
class PopulationMember:
    vector: np.ndarray
    label: int
    affinity: float
    index: int


class GenerationTrace:
    """Per-generation class proportions and mean affinities at one layer."""

    def __init__(self, layer: int, class_count: int):
        self.layer = layer
        self.class_count = class_count
        self.generations: list[int] = []
        self.sizes: list[int] = []
        self.proportions: list[np.ndarray] = []
        self.mean_affinities: list[np.ndarray] = []

    def record(self, population: Population) -> None:
        labels = population.labels
        counts = np.bincount(labels, minlength=self.class_count)
        means = np.full(self.class_count, np.nan)
        for c in np.nonzero(counts)[0]:
            means[c] = float(np.mean(population.affinities[labels == c]))
        self.generations.append(population.generation)
        self.sizes.append(len(population))
        self.proportions.append(counts / len(population))
        self.mean_affinities.append(means)

    def proportion_of(self, class_label: int) -> np.ndarray:
        return np.array([p[class_label] for p in self.proportions])

    def mean_affinity_of(self, class_label: int) -> np.ndarray:
        return np.array([m[class_label] for m in self.mean_affinities])

    @property
    def final_generation(self) -> int:
        return self.generations[-1] if self.generations else -1

    def to_csv(self, target) -> None:
        """Write rows (generation, class, proportion, mean_affinity).

        Absent classes get an empty affinity cell.  target is a path or a
        text file object.
        """
        if hasattr(target, "write"):
            self._write(target)
        else:
            with open(target, "w", newline="") as fh:
                self._write(fh)

    def _write(self, fh) -> None:
        fh.write("generation,class,proportion,mean_affinity\n")
        for g, prop, mean in zip(self.generations, self.proportions,
                                 self.mean_affinities):
            for c in range(self.class_count):
                cell = "" if np.isnan(mean[c]) else f"{mean[c]:.17g}"
                fh.write(f"{g},{c},{prop[c]:.17g},{cell}\n")

    def csv_text(self) -> str:
        buf = io.StringIO()
        self._write(buf)
        return buf.getvalue()


def selection_probabilities(affinities: np.ndarray,
                            temperature: float) -> np.ndarray:
    """Softmax of affinity / temperature, stabilized by max subtraction."""
    if temperature <= 0.0:
        raise ConfigError("temperature must be positive")
    z = np.asarray(affinities, dtype=np.float64) / temperature
    z = z - np.max(z)
    p = np.exp(z)
    return p / np.sum(p)


def select_parents(population: Population, probabilities: np.ndarray,
                   rng: np.random.Generator,
                   ) -> tuple[PopulationMember, PopulationMember | None]:
    """Draw parent1 over the whole population, parent2 from its classmates.

    parent2 probabilities are the same softmax weights restricted to members
    sharing parent1's label, excluding parent1 itself, renormalized.  Returns
    (parent1, None) when parent1 is the only member of its class.
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.shape != (len(population),):
        raise DataError("probabilities must align with the population")
    first = int(rng.choice(len(population), p=probabilities))
    mates = np.nonzero(population.labels == population.labels[first])[0]
    mates = mates[mates != first]
    if mates.shape[0] == 0:
        return population.member(first), None
    weights = probabilities[mates]
    total = weights.sum()
    if total > 0.0:
        weights = weights / total
    else:
        weights = np.full(mates.shape[0], 1.0 / mates.shape[0])
    second = int(rng.choice(mates, p=weights))
    return population.member(first), population.member(second)


def _crossover_batch(v1: np.ndarray, v2: np.ndarray, a1: np.ndarray,
                     a2: np.ndarray, mode: str,
                     rng: np.random.Generator) -> np.ndarray:
    if mode not in CROSSOVER_MODES:
        raise ConfigError(f"unknown crossover_mode {mode!r}")
    wsum = a1 + a2
    first = a1 if mode == "literal" else a2
    safe = np.where(wsum == 0.0, 1.0, wsum)
    w = np.where(wsum == 0.0, 0.5, first / safe)
    pick = rng.random(v1.shape) < w[:, None]
    return np.where(pick, v1, v2)


def crossover(parent1: PopulationMember, parent2: PopulationMember | None,
              mode: str, rng: np.random.Generator) -> np.ndarray:
    """Per-entry mix of the two parents.

    Parent1's entry is taken with weight affinity1 / (affinity1 + affinity2)
    in literal mode (this favors the lower-affinity parent, since affinities
    are non-positive) and with the complementary weight in inverted mode.
    Without a mate the offspring is parent1 unchanged.
    """
    if parent2 is None:
        return parent1.vector.copy()
    if parent1.label != parent2.label:
        raise DataError("crossover parents must share a class label")
    if parent1.vector.shape != parent2.vector.shape:
        raise DataError("crossover parents must share a dimension")
    out = _crossover_batch(
        parent1.vector[None, :], parent2.vector[None, :],
        np.array([parent1.affinity]), np.array([parent2.affinity]),
        mode, rng)
    return out[0]


def _mutate_batch(vectors: np.ndarray, cfg: ExpansionConfig,
                  rng: np.random.Generator) -> np.ndarray:
    flip = rng.random(vectors.shape) < cfg.mutation_prob
    u = rng.uniform(-1.0, 1.0, size=vectors.shape)
    mag = cfg.mutation_min + np.abs(u) * (cfg.mutation_max - cfg.mutation_min)
    step = np.where(u >= 0.0, mag, -mag)
    return np.clip(vectors + np.where(flip, step, 0.0), 0.0, 1.0)


def mutate(vector: np.ndarray, cfg: ExpansionConfig,
           rng: np.random.Generator) -> np.ndarray:
    """Each entry independently gains +-Uniform[mutation_min, mutation_max]
    with probability mutation_prob; the result is clipped to [0, 1]."""
    vector = np.asarray(vector, dtype=np.float64)
    return _mutate_batch(vector[None, :], cfg, rng)[0]


def init_population(neighbors: Sequence[NeighborSet], cfg: ExpansionConfig,
                    rng: np.random.Generator,
                    score: Callable[[np.ndarray], np.ndarray] | None = None,
                    ) -> Population:
    """Seed generation 0 by cloning and mutating the flocked neighbors.

    Clones are distributed as evenly as possible: every neighbor yields
    floor(T / total) mutants and the remainder goes to the earliest
    neighbors in class-then-rank order.  T below the neighbor count is an
    error rather than a silent drop.
    """
    cfg.validate()
    sets = sorted(neighbors, key=lambda s: s.class_label)
    if not sets:
        raise DataError("no neighbor sets to expand")
    if len({s.class_label for s in sets}) != len(sets):
        raise DataError("duplicate class labels among neighbor sets")
    base = np.vstack([s.vectors for s in sets])
    base_labels = np.concatenate(
        [np.full(len(s), s.class_label, dtype=np.int64) for s in sets])
    total = base.shape[0]
    if cfg.population_size < total:
        raise ConfigError(
            f"population_size {cfg.population_size} is smaller than the "
            f"{total} flocked neighbors")
    counts = np.full(total, cfg.population_size // total, dtype=np.int64)
    counts[:cfg.population_size % total] += 1
    vectors = _mutate_batch(np.repeat(base, counts, axis=0), cfg, rng)
    labels = np.repeat(base_labels, counts)
    aff = score(vectors) if score is not None else np.full(len(labels), np.nan)
    return Population(vectors=vectors, labels=labels, affinities=aff,
                      generation=0)


def _pick_mates(labels: np.ndarray, affinities: np.ndarray, first: np.ndarray,
                temperature: float, rng: np.random.Generator) -> np.ndarray:
    """Vectorized same-class mate choice for each selected first parent.

    Sampling argmax(logit + Gumbel noise) over the classmates of parent1
    (parent1 itself masked out) draws from exactly the renormalized softmax
    that the scalar path uses.  Returns -1 where the class has no other
    member.
    """
    logits = affinities / temperature
    mates = np.full(first.shape[0], -1, dtype=np.int64)
    for c in np.unique(labels[first]):
        rows = np.nonzero(labels[first] == c)[0]
        members = np.nonzero(labels == c)[0]
        if members.shape[0] < 2:
            continue
        keys = logits[members][None, :] + rng.gumbel(
            size=(rows.shape[0], members.shape[0]))
        own = np.searchsorted(members, first[rows])
        keys[np.arange(rows.shape[0]), own] = -np.inf
        mates[rows] = members[np.argmax(keys, axis=1)]
    return mates


def expand(x: np.ndarray, neighbors: Sequence[NeighborSet],
           net: FeatureNetwork, layer: int, cfg: ExpansionConfig,
           rng: np.random.Generator) -> tuple[Population, GenerationTrace]:
    """Run the full expansion loop for one query at one feature layer.

    Returns the final population and a per-generation trace.  Stops early
    once a single class holds at least early_stop_fraction of the
    population (checked on offspring generations only).
    """
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    fx = net.forward_activations(x, [layer])[layer]

    def score(vectors: np.ndarray) -> np.ndarray:
        feats = net.forward_activations(vectors, [layer])[layer]
        return affinities_to_point(feats, fx)

    for s in neighbors:
        if s.layer != layer:
            raise DataError(
                f"neighbor set for layer {s.layer} passed to expansion at "
                f"layer {layer}")

    sel_rng, cross_rng, mut_rng = rng.spawn(3)
    pop = init_population(neighbors, cfg, mut_rng, score)
    trace = GenerationTrace(layer, net.class_count)
    trace.record(pop)

    size = cfg.population_size
    for gen in range(1, cfg.max_generations + 1):
        probs = selection_probabilities(pop.affinities, cfg.temperature)
        first = sel_rng.choice(size, size=size, replace=True, p=probs)
        mates = _pick_mates(pop.labels, pop.affinities, first,
                            cfg.temperature, sel_rng)
        second = np.where(mates >= 0, mates, first)
        children = _crossover_batch(
            pop.vectors[first], pop.vectors[second],
            pop.affinities[first], pop.affinities[second],
            cfg.crossover_mode, cross_rng)
        children = _mutate_batch(children, cfg, mut_rng)
        pop = Population(vectors=children, labels=pop.labels[first].copy(),
                         affinities=score(children), generation=gen)
        trace.record(pop)
        if cfg.early_stop:
            top = np.max(np.bincount(pop.labels)) / size
            if top >= cfg.early_stop_fraction:
                break
    return pop, trace
