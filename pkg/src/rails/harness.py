"""Experiment harness: datasets, splits, training, evaluation, hardening.

An ExperimentSpec is a flat bag of typed fields loadable from a JSON file.
evaluate() measures the plain network, the DkNN baseline, and the immune
pipeline on a clean and an attacked test batch, writing deterministic CSVs.
run_ssal() harvests memory cells from attacked queries, hardens the
reference set, and re-measures DkNN on a fresh batch.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .adaptive import MemoryBank, harden
from .attacks import AttackConfig, attack_batch
from .dknn import CalibrationSet, dknn_predict
from .errors import ConfigError, DataError, FormatError
from .featmap import FeatureNetwork, load_weights, save_weights, train_network
from .flocking import Dataset, ReferenceFeatures
from .numerics import derive_stream
from .predictor import RailsConfig, rails_predict

METHODS = ("network", "dknn", "rails")


def load_idx(images_path: str, labels_path: str,
             class_count: int = 10) -> Dataset:
    """Read an IDX image/label file pair; pixels are scaled to [0, 1]."""
    with open(images_path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise FormatError(f"{images_path}: too short for an IDX image header")
    magic, count, rows, cols = struct.unpack(">IIII", blob[:16])
    if magic != 0x00000803:
        raise FormatError(f"{images_path}: bad magic {magic:#010x}")
    need = 16 + count * rows * cols
    if len(blob) != need:
        raise FormatError(
            f"{images_path}: expected {need} bytes, found {len(blob)}")
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=16)
    vectors = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0

    with open(labels_path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise FormatError(f"{labels_path}: too short for an IDX label header")
    magic, n_labels = struct.unpack(">II", blob[:8])
    if magic != 0x00000801:
        raise FormatError(f"{labels_path}: bad magic {magic:#010x}")
    if n_labels != count:
        raise FormatError(
            f"{labels_path}: {n_labels} labels for {count} images")
    if len(blob) != 8 + n_labels:
        raise FormatError(f"{labels_path}: truncated label payload")
    labels = np.frombuffer(blob, dtype=np.uint8, offset=8).astype(np.int64)
    return Dataset(vectors=vectors, labels=labels, class_count=class_count)


def synth_dataset(classes: int, per_class: int, dim: int, spread: float,
                  noise: float, seed: int) -> Dataset:
    """Gaussian blobs clipped to the unit box.

    Class centers are spaced uniformly at random inside the centered cube
    of side `spread`; samples add isotropic noise.
    """
    if classes < 2 or per_class < 1 or dim < 1:
        raise ConfigError("synthetic data needs classes>=2, per_class>=1, dim>=1")
    if not 0.0 < spread <= 1.0 or noise < 0.0:
        raise ConfigError("need 0 < spread <= 1 and noise >= 0")
    rng = derive_stream(seed, 0, "synthetic-data")
    centers = 0.5 + spread * (rng.random((classes, dim)) - 0.5)
    vectors = np.empty((classes * per_class, dim))
    labels = np.empty(classes * per_class, dtype=np.int64)
    for c in range(classes):
        block = slice(c * per_class, (c + 1) * per_class)
        vectors[block] = centers[c] + noise * rng.standard_normal((per_class, dim))
        labels[block] = c
    order = rng.permutation(classes * per_class)
    return Dataset(vectors=np.clip(vectors[order], 0.0, 1.0),
                   labels=labels[order], class_count=classes)


@dataclass
class ExperimentSpec:
    """Flat, JSON-loadable description of one experiment."""

    dataset: str = "synthetic"
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    class_count: int = 10
    classes: int = 3
    per_class: int = 400
    dim: int = 16
    spread: float = 0.8
    noise: float = 0.08
    train_size: int = 600
    calibration_size: int = 200
    test_size: int = 100
    harvest_size: int = 0
    hidden: list[int] = field(default_factory=lambda: [32])
    epochs: int = 20
    learning_rate: float = 0.1
    batch_size: int = 32
    weights: str | None = None
    neighbors_per_class: int = 5
    layers: list[int] | None = None
    population_size: int = 1000
    max_generations: int = 50
    mutation_prob: float = 0.15
    mutation_min: float = 0.05
    mutation_max: float = 0.15
    temperature: float | list[float] = 1.0
    crossover_mode: str = "literal"
    plasma_fraction: float = 0.05
    memory_fraction: float = 0.25
    early_stop: bool = True
    early_stop_fraction: float = 1.0
    dknn_neighbors: int = 10
    attack_kind: str = "pgd"
    attack_epsilon: float = 0.235
    attack_steps: int = 20
    attack_step_size: float | None = None
    memory_bank: str | None = None
    memory_capacity: int | None = None
    seed: int = 0
    outdir: str = "results"

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentSpec":
        known = set(cls.field_names())
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        spec = cls(**mapping)
        spec.validate_types()
        return spec

    @classmethod
    def from_file(cls, path: str) -> "ExperimentSpec":
        try:
            with open(path) as fh:
                mapping = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(mapping, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_mapping(mapping)

    def validate_types(self) -> None:
        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        need(self.dataset in ("synthetic", "idx"),
             f"dataset must be 'synthetic' or 'idx', got {self.dataset!r}")
        if self.dataset == "idx":
            for name in ("train_images", "train_labels", "test_images",
                         "test_labels"):
                need(isinstance(getattr(self, name), str),
                     f"{name} is required for dataset 'idx'")
        for name in ("class_count", "classes", "per_class", "dim",
                     "train_size", "calibration_size", "test_size",
                     "harvest_size", "epochs", "batch_size",
                     "neighbors_per_class", "population_size",
                     "max_generations", "dknn_neighbors", "attack_steps",
                     "seed"):
            value = getattr(self, name)
            need(isinstance(value, int) and not isinstance(value, bool),
                 f"{name} must be an integer")
        for name in ("spread", "noise", "learning_rate", "mutation_prob",
                     "mutation_min", "mutation_max", "plasma_fraction",
                     "memory_fraction", "early_stop_fraction",
                     "attack_epsilon"):
            value = getattr(self, name)
            need(isinstance(value, (int, float)) and not isinstance(value, bool),
                 f"{name} must be a number")
        need(isinstance(self.hidden, list)
             and all(isinstance(w, int) and w > 0 for w in self.hidden),
             "hidden must be a list of positive integers")
        need(self.layers is None
             or (isinstance(self.layers, list)
                 and all(isinstance(l, int) for l in self.layers)),
             "layers must be null or a list of integers")
        if not isinstance(self.temperature, (int, float)):
            need(isinstance(self.temperature, list)
                 and all(isinstance(t, (int, float)) for t in self.temperature),
                 "temperature must be a number or a list of numbers")
        need(isinstance(self.early_stop, bool), "early_stop must be a boolean")
        need(self.attack_kind in ("none", "fgsm", "pgd"),
             f"attack_kind must be none, fgsm, or pgd, got {self.attack_kind!r}")
        need(self.attack_step_size is None
             or isinstance(self.attack_step_size, (int, float)),
             "attack_step_size must be null or a number")
        need(self.memory_capacity is None
             or (isinstance(self.memory_capacity, int)
                 and self.memory_capacity > 0),
             "memory_capacity must be null or a positive integer")
        for name in ("train_size", "calibration_size", "test_size"):
            need(getattr(self, name) > 0, f"{name} must be positive")
        need(self.harvest_size >= 0, "harvest_size must be non-negative")

    def to_mapping(self) -> dict:
        return dataclasses.asdict(self)

    def rails_config(self) -> RailsConfig:
        return RailsConfig(
            neighbors_per_class=self.neighbors_per_class,
            layers=self.layers,
            population_size=self.population_size,
            max_generations=self.max_generations,
            mutation_prob=self.mutation_prob,
            mutation_min=self.mutation_min,
            mutation_max=self.mutation_max,
            temperature=self.temperature,
            crossover_mode=self.crossover_mode,
            plasma_fraction=self.plasma_fraction,
            memory_fraction=self.memory_fraction,
            early_stop=self.early_stop,
            early_stop_fraction=self.early_stop_fraction,
            dknn_neighbors=self.dknn_neighbors,
            seed=self.seed)

    def attack_config(self) -> AttackConfig:
        if self.attack_kind == "none":
            raise ConfigError("no attack configured")
        cfg = AttackConfig(kind=self.attack_kind, epsilon=self.attack_epsilon,
                           steps=self.attack_steps,
                           step_size=self.attack_step_size)
        cfg.validate()
        return cfg


@dataclass
class ExperimentParts:
    """Materialized experiment: splits, trained network, optional bank."""

    train: Dataset
    calibration_vectors: np.ndarray
    calibration_labels: np.ndarray
    test_vectors: np.ndarray
    test_labels: np.ndarray
    harvest_vectors: np.ndarray
    harvest_labels: np.ndarray
    net: FeatureNetwork
    bank: MemoryBank | None


def _split_idx(spec: ExperimentSpec):
    pool = load_idx(spec.train_images, spec.train_labels, spec.class_count)
    need = spec.train_size + spec.calibration_size
    if need > len(pool):
        raise ConfigError(
            f"train_size + calibration_size = {need} exceeds the "
            f"{len(pool)}-example training pool")
    order = derive_stream(spec.seed, 0, "train-split").permutation(len(pool))
    train = pool.take(order[:spec.train_size])
    calib = order[spec.train_size:need]

    test_pool = load_idx(spec.test_images, spec.test_labels, spec.class_count)
    need_test = spec.test_size + spec.harvest_size
    if need_test > len(test_pool):
        raise ConfigError(
            f"test_size + harvest_size = {need_test} exceeds the "
            f"{len(test_pool)}-example test pool")
    t_order = derive_stream(spec.seed, 0, "test-split").permutation(len(test_pool))
    test = t_order[:spec.test_size]
    harvest = t_order[spec.test_size:need_test]
    return (train, pool.vectors[calib], pool.labels[calib],
            test_pool.vectors[test], test_pool.labels[test],
            test_pool.vectors[harvest], test_pool.labels[harvest])


def _split_synth(spec: ExperimentSpec):
    pool = synth_dataset(spec.classes, spec.per_class, spec.dim, spec.spread,
                         spec.noise, spec.seed)
    need = (spec.train_size + spec.calibration_size + spec.test_size
            + spec.harvest_size)
    if need > len(pool):
        raise ConfigError(
            f"splits need {need} examples, synthetic pool has {len(pool)}")
    order = derive_stream(spec.seed, 0, "train-split").permutation(len(pool))
    a = spec.train_size
    b = a + spec.calibration_size
    c = b + spec.test_size
    d = c + spec.harvest_size
    train = pool.take(order[:a])
    return (train, pool.vectors[order[a:b]], pool.labels[order[a:b]],
            pool.vectors[order[b:c]], pool.labels[order[b:c]],
            pool.vectors[order[c:d]], pool.labels[order[c:d]])


def build_experiment(spec: ExperimentSpec) -> ExperimentParts:
    """Load data, cut the splits, and train (or load) the network.

    When a weights path is set, a fresh network is trained, saved, and read
    back, so in-memory weights always equal the artifact on disk.
    """
    spec.validate_types()
    if spec.dataset == "idx":
        splits = _split_idx(spec)
    else:
        splits = _split_synth(spec)
    train = splits[0]

    arch = [train.dim] + list(spec.hidden) + [train.class_count]
    if spec.weights is not None and os.path.exists(spec.weights):
        net = load_weights(spec.weights)
        if net.input_dim != train.dim or net.class_count != train.class_count:
            raise DataError(
                f"{spec.weights}: network shape {net.input_dim}->"
                f"{net.class_count} does not fit data {train.dim}->"
                f"{train.class_count}")
    else:
        net = train_network(train, arch, spec.epochs, spec.learning_rate,
                            spec.seed, spec.batch_size)
        if spec.weights is not None:
            os.makedirs(os.path.dirname(spec.weights) or ".", exist_ok=True)
            save_weights(net, spec.weights)
            net = load_weights(spec.weights)

    bank = None
    if spec.memory_bank is not None and os.path.exists(spec.memory_bank):
        bank = MemoryBank.load(spec.memory_bank, capacity=spec.memory_capacity)

    return ExperimentParts(
        train=train,
        calibration_vectors=splits[1], calibration_labels=splits[2],
        test_vectors=splits[3], test_labels=splits[4],
        harvest_vectors=splits[5], harvest_labels=splits[6],
        net=net, bank=bank)


@dataclass
class BatchResult:
    """Per-query predictions of all three methods on one batch."""

    truth: np.ndarray
    network: np.ndarray
    dknn: np.ndarray
    dknn_credibility: np.ndarray
    rails: np.ndarray
    rails_confidence: np.ndarray

    def correct(self, method: str) -> int:
        return int(np.sum(getattr(self, method) == self.truth))

    def accuracy(self, method: str) -> float:
        return self.correct(method) / self.truth.shape[0]

    def __len__(self) -> int:
        return self.truth.shape[0]


def intersection_counts(rails_labels: np.ndarray, dknn_labels: np.ndarray,
                        truth: np.ndarray) -> np.ndarray:
    """2x2 counts: rows = rails correct/wrong, cols = dknn correct/wrong."""
    rails_labels = np.asarray(rails_labels)
    dknn_labels = np.asarray(dknn_labels)
    truth = np.asarray(truth)
    if not rails_labels.shape == dknn_labels.shape == truth.shape:
        raise DataError("intersection inputs must have equal lengths")
    r_ok = rails_labels == truth
    d_ok = dknn_labels == truth
    return np.array([
        [int(np.sum(r_ok & d_ok)), int(np.sum(r_ok & ~d_ok))],
        [int(np.sum(~r_ok & d_ok)), int(np.sum(~r_ok & ~d_ok))]])


def intersection_matrix(rails_labels: np.ndarray, dknn_labels: np.ndarray,
                        truth: np.ndarray) -> np.ndarray:
    """Fractions of (rails correct/wrong) x (dknn correct/wrong); sums to 1."""
    counts = intersection_counts(rails_labels, dknn_labels, truth)
    if truth.shape[0] == 0:
        raise DataError("intersection of empty batches is undefined")
    return counts / truth.shape[0]


@dataclass
class EvalReport:
    spec: ExperimentSpec
    clean: BatchResult
    adversarial: BatchResult | None

    def intersection(self, batch: BatchResult) -> np.ndarray:
        return intersection_counts(batch.rails, batch.dknn, batch.truth)


Progress = Callable[[str, int, int], None] | None


def _predict_batch(vectors: np.ndarray, truth: np.ndarray, train: Dataset,
                   net: FeatureNetwork, cfg: RailsConfig,
                   calibration: CalibrationSet, bank,
                   features: ReferenceFeatures, stage: str,
                   progress: Progress) -> BatchResult:
    n = vectors.shape[0]
    layers = cfg.resolve_layers(net)
    network = net.predict_labels(vectors)
    dknn_labels = np.empty(n, dtype=np.int64)
    dknn_cred = np.empty(n)
    rails_labels = np.empty(n, dtype=np.int64)
    rails_conf = np.empty(n)
    for i in range(n):
        sensed = dknn_predict(vectors[i], train, net, layers,
                              cfg.dknn_neighbors, calibration,
                              memory=bank, features=features)
        dknn_labels[i] = sensed.label
        dknn_cred[i] = sensed.credibility
        pred = rails_predict(vectors[i], train, net, cfg, query_id=i,
                             memory=bank, features=features)
        rails_labels[i] = pred.label
        rails_conf[i] = pred.confidence
        if progress is not None:
            progress(stage, i + 1, n)
    return BatchResult(truth=truth.copy(), network=network,
                       dknn=dknn_labels, dknn_credibility=dknn_cred,
                       rails=rails_labels, rails_confidence=rails_conf)


def evaluate(spec: ExperimentSpec, progress: Progress = None) -> EvalReport:
    """Measure all three methods on the clean and attacked test batch.

    Writes metrics.csv, predictions_clean.csv, predictions_adv.csv, and
    run_config.json under spec.outdir.  Queries never alter the memory
    bank, so results do not depend on evaluation order.
    """
    parts = build_experiment(spec)
    cfg = spec.rails_config()
    cfg.validate(parts.net)
    layers = cfg.resolve_layers(parts.net)

    features = ReferenceFeatures.build(parts.train, parts.net, layers,
                                       parts.bank)
    calibration = CalibrationSet.build(
        parts.calibration_vectors, parts.calibration_labels, parts.train,
        parts.net, layers, cfg.dknn_neighbors, memory=parts.bank,
        features=features)

    clean = _predict_batch(parts.test_vectors, parts.test_labels, parts.train,
                           parts.net, cfg, calibration, parts.bank, features,
                           "clean", progress)
    adversarial = None
    if spec.attack_kind != "none" and spec.attack_epsilon > 0.0:
        adv_vectors = attack_batch(parts.net, parts.test_vectors,
                                   parts.test_labels, spec.attack_config(),
                                   spec.seed)
        adversarial = _predict_batch(adv_vectors, parts.test_labels,
                                     parts.train, parts.net, cfg, calibration,
                                     parts.bank, features, "adversarial",
                                     progress)

    report = EvalReport(spec=spec, clean=clean, adversarial=adversarial)
    _write_report(report)
    return report


def _write_predictions(path: str, batch: BatchResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("query,true,network,dknn,dknn_credibility,"
                 "rails,rails_confidence\n")
        for i in range(len(batch)):
            fh.write(f"{i},{batch.truth[i]},{batch.network[i]},"
                     f"{batch.dknn[i]},{batch.dknn_credibility[i]:.6f},"
                     f"{batch.rails[i]},{batch.rails_confidence[i]:.6f}\n")


def _write_report(report: EvalReport) -> None:
    outdir = report.spec.outdir
    os.makedirs(outdir, exist_ok=True)
    batches = [("clean", report.clean)]
    if report.adversarial is not None:
        batches.append(("adversarial", report.adversarial))

    with open(os.path.join(outdir, "metrics.csv"), "w", newline="") as fh:
        fh.write("method,batch,accuracy_pct,correct,total\n")
        for name, batch in batches:
            for method in METHODS:
                fh.write(f"{method},{name},{100 * batch.accuracy(method):.2f},"
                         f"{batch.correct(method)},{len(batch)}\n")
        cells = ("both_correct", "rails_only", "dknn_only", "both_wrong")
        for name, batch in batches:
            m = report.intersection(batch).ravel()
            for cell, count in zip(cells, m):
                fh.write(f"{cell},{name},{100 * count / len(batch):.2f},"
                         f"{count},{len(batch)}\n")

    _write_predictions(os.path.join(outdir, "predictions_clean.csv"),
                       report.clean)
    if report.adversarial is not None:
        _write_predictions(os.path.join(outdir, "predictions_adv.csv"),
                           report.adversarial)

    with open(os.path.join(outdir, "run_config.json"), "w") as fh:
        json.dump(report.spec.to_mapping(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class SSALReport:
    """DkNN accuracy on a fresh batch before and after hardening."""

    spec: ExperimentSpec
    robust_before: float
    robust_after: float
    clean_before: float
    clean_after: float
    bank_size: int
    harvested: int
    total: int


def run_ssal(spec: ExperimentSpec, progress: Progress = None) -> SSALReport:
    """Harvest memory from attacked queries, harden, re-measure DkNN.

    The harvest batch and the measurement batch are disjoint test slices.
    Queries see the pre-batch bank state only; cells are absorbed after the
    whole harvest batch ran.  Writes ssal.csv and the bank under
    spec.outdir.
    """
    if spec.harvest_size < 1:
        raise ConfigError("run_ssal needs harvest_size >= 1")
    parts = build_experiment(spec)
    cfg = spec.rails_config()
    cfg.validate(parts.net)
    layers = cfg.resolve_layers(parts.net)
    attack = spec.attack_config()

    adv_fresh = attack_batch(parts.net, parts.test_vectors, parts.test_labels,
                             attack, spec.seed)
    adv_harvest = attack_batch(parts.net, parts.harvest_vectors,
                               parts.harvest_labels, attack, spec.seed)

    def dknn_accuracy(vectors: np.ndarray, truth: np.ndarray, data: Dataset,
                      features: ReferenceFeatures) -> float:
        hits = 0
        for i in range(vectors.shape[0]):
            res = dknn_predict(vectors[i], data, parts.net, layers,
                               cfg.dknn_neighbors, features=features)
            hits += int(res.label == truth[i])
        return hits / vectors.shape[0]

    base_features = ReferenceFeatures.build(parts.train, parts.net, layers,
                                            parts.bank)
    robust_before = dknn_accuracy(adv_fresh, parts.test_labels, parts.train,
                                  base_features)
    clean_before = dknn_accuracy(parts.test_vectors, parts.test_labels,
                                 parts.train, base_features)

    bank = parts.bank if parts.bank is not None else MemoryBank(
        dim=parts.train.dim, capacity=spec.memory_capacity)
    harvested = []
    for i in range(adv_harvest.shape[0]):
        pred = rails_predict(adv_harvest[i], parts.train, parts.net, cfg,
                             query_id=i, memory=parts.bank,
                             features=base_features)
        harvested.append(pred.maturation)
        if progress is not None:
            progress("harvest", i + 1, adv_harvest.shape[0])
    added = sum(bank.absorb(result) for result in harvested)

    hardened = harden(parts.train, bank)
    hard_features = ReferenceFeatures.build(hardened, parts.net, layers)
    robust_after = dknn_accuracy(adv_fresh, parts.test_labels, hardened,
                                 hard_features)
    clean_after = dknn_accuracy(parts.test_vectors, parts.test_labels,
                                hardened, hard_features)

    os.makedirs(spec.outdir, exist_ok=True)
    bank.save(os.path.join(spec.outdir, "memory_bank.bin"))
    report = SSALReport(
        spec=spec,
        robust_before=robust_before, robust_after=robust_after,
        clean_before=clean_before, clean_after=clean_after,
        bank_size=len(bank), harvested=added, total=len(parts.test_labels))
    with open(os.path.join(spec.outdir, "ssal.csv"), "w", newline="") as fh:
        fh.write("metric,before_pct,after_pct\n")
        fh.write(f"robust_accuracy,{100 * robust_before:.2f},"
                 f"{100 * robust_after:.2f}\n")
        fh.write(f"clean_accuracy,{100 * clean_before:.2f},"
                 f"{100 * clean_after:.2f}\n")
    return report
