"""Static-secretion adaptive learning: bank memory cells, harden the dataset.

Memory cells harvested from expansions are appended to a bank with
bounded capacity (oldest entries leave first).  Hardening merges the bank
into a dataset so the cells join every later neighbor search, which is how
the system adapts to attacks it has already seen.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .flocking import Dataset
from .maturation import MaturationResult

_MAGIC = b"RAILSMEM"


def save_vectors(path: str, vectors: np.ndarray, labels: np.ndarray,
                 provenance: list[dict] | None = None) -> None:
    """Write labeled vectors in the RAILSMEM container (little-endian).

    Entries are stored as u32 label + float32 vector.  When provenance is
    given it goes to a JSON sidecar at path + ".json"; its length must
    match the entry count.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if vectors.ndim != 2:
        raise DataError("vectors must be a (n, d) matrix")
    if labels.shape != (vectors.shape[0],):
        raise DataError("labels must align with vectors")
    if np.any(labels < 0):
        raise DataError("labels must be non-negative")
    count, dim = vectors.shape
    if count > 0 and dim == 0:
        raise DataError("entries must have at least one dimension")
    if provenance is not None and len(provenance) != count:
        raise DataError("provenance length must match the entry count")

    entry = np.dtype([("label", "<u4"), ("vec", "<f4", (dim,))])
    rows = np.zeros(count, dtype=entry)
    rows["label"] = labels
    if dim:
        rows["vec"] = vectors
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", count, dim))
        fh.write(rows.tobytes())
    if provenance is not None:
        with open(path + ".json", "w") as fh:
            json.dump(provenance, fh, sort_keys=True, separators=(",", ":"))


def load_vectors(path: str) -> tuple[np.ndarray, np.ndarray, list[dict] | None]:
    """Read a RAILSMEM container; returns (vectors, labels, provenance)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 8:
        raise FormatError(f"{path}: too short for a RAILSMEM header")
    if blob[:len(_MAGIC)] != _MAGIC:
        raise FormatError(f"{path}: bad magic, not a RAILSMEM file")
    count, dim = struct.unpack("<II", blob[8:16])
    if count > 0 and dim == 0:
        raise FormatError(f"{path}: {count} entries with zero dimension")
    entry = np.dtype([("label", "<u4"), ("vec", "<f4", (dim,))])
    need = 16 + count * entry.itemsize
    if len(blob) < need:
        raise FormatError(
            f"{path}: truncated, expected {need} bytes, found {len(blob)}")
    if len(blob) > need:
        raise FormatError(f"{path}: {len(blob) - need} trailing bytes")
    rows = np.frombuffer(blob, dtype=entry, count=count, offset=16)
    vectors = rows["vec"].astype(np.float64).reshape(count, dim)
    labels = rows["label"].astype(np.int64)
    if not np.all(np.isfinite(vectors)):
        raise FormatError(f"{path}: non-finite vector entries")

    provenance = None
    sidecar = path + ".json"
    if os.path.exists(sidecar):
        with open(sidecar) as fh:
            provenance = json.load(fh)
        if not isinstance(provenance, list) or len(provenance) != count:
            raise FormatError(
                f"{sidecar}: provenance does not match {count} entries")
    return vectors, labels, provenance


class MemoryBank:
    """FIFO store of harvested memory cells with provenance.

    capacity=None means unbounded; otherwise only the newest `capacity`
    entries are kept.
    """

    def __init__(self, dim: int | None = None, capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise ConfigError("capacity must be positive or None")
        self.capacity = capacity
        self._dim = dim
        self._vectors = np.empty((0, dim if dim else 0))
        self._labels = np.empty(0, dtype=np.int64)
        self._provenance: list[dict] = []

    def __len__(self) -> int:
        return self._labels.shape[0]

    @property
    def dim(self) -> int | None:
        return self._dim

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def provenance(self) -> list[dict]:
        return list(self._provenance)

    @classmethod
    def from_arrays(cls, vectors: np.ndarray, labels: np.ndarray,
                    capacity: int | None = None,
                    provenance: list[dict] | None = None) -> "MemoryBank":
        vectors = np.asarray(vectors, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if vectors.ndim != 2 or labels.shape != (vectors.shape[0],):
            raise DataError("need (n, d) vectors and n labels")
        if vectors.size and (vectors.min() < 0.0 or vectors.max() > 1.0):
            raise DataError("memory cells must lie in [0, 1]")
        if labels.size and labels.min() < 0:
            raise DataError("labels must be non-negative")
        if provenance is not None and len(provenance) != labels.shape[0]:
            raise DataError("provenance length must match the entry count")
        bank = cls(dim=vectors.shape[1] if vectors.shape[0] else None,
                   capacity=capacity)
        bank._vectors = vectors.copy()
        bank._labels = labels.copy()
        bank._provenance = (list(provenance) if provenance is not None
                            else [{} for _ in range(labels.shape[0])])
        bank._evict()
        return bank

    def absorb(self, result: MaturationResult) -> int:
        """Append every memory cell harvested for one query; returns how
        many entries were added (before any eviction)."""
        blocks = []
        labels = []
        meta = []
        for layer in sorted(result.memory):
            cells = result.memory[layer]
            if len(cells) == 0:
                continue
            blocks.append(cells.vectors)
            labels.append(cells.labels)
            gen = result.final_generation.get(layer, -1)
            meta.extend({"query_id": int(result.query_id), "layer": int(layer),
                         "generation": int(gen)} for _ in range(len(cells)))
        if not blocks:
            return 0
        vectors = np.vstack(blocks)
        if self._dim is None:
            self._dim = vectors.shape[1]
            self._vectors = np.empty((0, self._dim))
        if vectors.shape[1] != self._dim:
            raise DataError(
                f"memory cells have dimension {vectors.shape[1]}, bank holds "
                f"{self._dim}")
        if np.min(vectors) < 0.0 or np.max(vectors) > 1.0:
            raise DataError("memory cells must lie in [0, 1]")
        self._vectors = np.vstack([self._vectors, vectors])
        self._labels = np.concatenate([self._labels, np.concatenate(labels)])
        self._provenance.extend(meta)
        added = vectors.shape[0]
        self._evict()
        return added

    def _evict(self) -> None:
        if self.capacity is not None and len(self) > self.capacity:
            drop = len(self) - self.capacity
            self._vectors = self._vectors[drop:]
            self._labels = self._labels[drop:]
            self._provenance = self._provenance[drop:]

    def save(self, path: str) -> None:
        save_vectors(path, self._vectors, self._labels, self._provenance)

    @classmethod
    def load(cls, path: str, capacity: int | None = None) -> "MemoryBank":
        vectors, labels, provenance = load_vectors(path)
        if vectors.size and (vectors.min() < 0.0 or vectors.max() > 1.0):
            raise FormatError(f"{path}: memory cells outside [0, 1]")
        bank = cls(dim=vectors.shape[1] if vectors.shape[0] else None,
                   capacity=capacity)
        bank._vectors = vectors
        bank._labels = labels
        bank._provenance = provenance if provenance is not None else [
            {} for _ in range(labels.shape[0])]
        bank._evict()
        return bank


def harden(data: Dataset, bank: MemoryBank) -> Dataset:
    """Merge bank entries into the dataset; empty banks return it unchanged."""
    if len(bank) == 0:
        return data
    if bank.dim != data.dim:
        raise DataError(
            f"bank dimension {bank.dim} does not match dataset {data.dim}")
    if bank.labels.max() >= data.class_count:
        raise DataError("bank labels exceed the dataset's class count")
    return Dataset(
        vectors=np.vstack([data.vectors, bank.vectors]),
        labels=np.concatenate([data.labels, bank.labels]),
        class_count=data.class_count)
