import json
import struct

import numpy as np
import pytest

from rails import (
    ConfigError,
    DataError,
    Dataset,
    FormatError,
    MaturationResult,
    MemoryBank,
    SelectedData,
    harden,
    load_vectors,
    save_vectors,
)


def selected(vectors, labels):
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    return SelectedData(vectors=vectors, labels=labels,
                        affinities=np.zeros(labels.shape[0]),
                        member_indices=np.arange(labels.shape[0]))


def maturation(query_id, memory_by_layer, final_generation=None):
    return MaturationResult(
        query_id=query_id,
        plasma={},
        memory=memory_by_layer,
        final_generation=final_generation or
        {l: 5 for l in memory_by_layer})


# --- container round trips ----------------------------------------------


def test_save_load_round_trip(tmp_path):
    path = str(tmp_path / "cells.bin")
    vectors = np.array([[0.25, 0.5], [0.75, 1.0]])
    labels = np.array([3, 1], dtype=np.int64)
    save_vectors(path, vectors, labels)
    got_v, got_l, got_p = load_vectors(path)
    assert np.array_equal(got_v, vectors)  # values are exact in float32
    assert np.array_equal(got_l, labels)
    assert got_p is None


def test_second_save_is_byte_identical(tmp_path):
    a = str(tmp_path / "a.bin")
    b = str(tmp_path / "b.bin")
    rng = np.random.default_rng(0)
    vectors = rng.random((10, 4))
    labels = rng.integers(0, 5, 10).astype(np.int64)
    prov = [{"query_id": i, "layer": 0, "generation": 2} for i in range(10)]
    save_vectors(a, vectors, labels, prov)
    got = load_vectors(a)
    save_vectors(b, got[0], got[1], got[2])
    assert open(a, "rb").read() == open(b, "rb").read()
    assert open(a + ".json").read() == open(b + ".json").read()


def test_save_empty_container(tmp_path):
    path = str(tmp_path / "empty.bin")
    save_vectors(path, np.zeros((0, 0)), np.zeros(0, dtype=np.int64))
    vectors, labels, _ = load_vectors(path)
    assert vectors.shape[0] == 0
    assert labels.shape[0] == 0


def test_save_rejects_bad_inputs(tmp_path):
    path = str(tmp_path / "x.bin")
    with pytest.raises(DataError):
        save_vectors(path, np.zeros(3), np.zeros(3, dtype=np.int64))
    with pytest.raises(DataError):
        save_vectors(path, np.zeros((2, 2)), np.zeros(3, dtype=np.int64))
    with pytest.raises(DataError):
        save_vectors(path, np.zeros((2, 2)), np.array([-1, 0]))
    with pytest.raises(DataError):
        save_vectors(path, np.zeros((2, 0)), np.zeros(2, dtype=np.int64))
    with pytest.raises(DataError):
        save_vectors(path, np.zeros((2, 2)), np.zeros(2, dtype=np.int64),
                     provenance=[{}])


def test_sidecar_contents(tmp_path):
    path = str(tmp_path / "cells.bin")
    prov = [{"query_id": 7, "layer": 1, "generation": 4}]
    save_vectors(path, np.array([[0.5]]), np.array([0]), prov)
    assert json.load(open(path + ".json")) == prov
    # compact separators, sorted keys
    text = open(path + ".json").read()
    assert text == '[{"generation":4,"layer":1,"query_id":7}]'


# --- malformed files -----------------------------------------------------


def valid_blob(count=2, dim=3):
    rng = np.random.default_rng(1)
    body = b""
    for i in range(count):
        body += struct.pack("<I", i % 2)
        body += rng.random(dim).astype("<f4").tobytes()
    return b"RAILSMEM" + struct.pack("<II", count, dim) + body


def write(tmp_path, blob, name="bad.bin"):
    path = str(tmp_path / name)
    with open(path, "wb") as fh:
        fh.write(blob)
    return path


def test_load_rejects_short_header(tmp_path):
    with pytest.raises(FormatError, match="too short"):
        load_vectors(write(tmp_path, b"RAILS"))


def test_load_rejects_bad_magic(tmp_path):
    blob = b"XAILSMEM" + valid_blob()[8:]
    with pytest.raises(FormatError, match="magic"):
        load_vectors(write(tmp_path, blob))


def test_load_rejects_truncation(tmp_path):
    with pytest.raises(FormatError, match="truncated"):
        load_vectors(write(tmp_path, valid_blob()[:-4]))


def test_load_rejects_trailing_bytes(tmp_path):
    with pytest.raises(FormatError, match="trailing"):
        load_vectors(write(tmp_path, valid_blob() + b"\x00"))


def test_load_rejects_zero_dim_with_entries(tmp_path):
    blob = b"RAILSMEM" + struct.pack("<II", 3, 0)
    with pytest.raises(FormatError, match="zero dimension"):
        load_vectors(write(tmp_path, blob))


def test_load_rejects_non_finite(tmp_path):
    blob = bytearray(valid_blob(count=1, dim=2))
    blob[20:24] = struct.pack("<f", float("nan"))
    with pytest.raises(FormatError, match="non-finite"):
        load_vectors(write(tmp_path, bytes(blob)))


def test_load_rejects_sidecar_length_mismatch(tmp_path):
    path = write(tmp_path, valid_blob(count=2, dim=3))
    with open(path + ".json", "w") as fh:
        json.dump([{}], fh)
    with pytest.raises(FormatError, match="provenance"):
        load_vectors(path)


def test_load_rejects_non_list_sidecar(tmp_path):
    path = write(tmp_path, valid_blob(count=2, dim=3))
    with open(path + ".json", "w") as fh:
        json.dump({"oops": 1}, fh)
    with pytest.raises(FormatError):
        load_vectors(path)


def test_load_without_sidecar_returns_none_provenance(tmp_path):
    path = write(tmp_path, valid_blob())
    _, _, prov = load_vectors(path)
    assert prov is None


# --- the bank -------------------------------------------------------------


def test_absorb_appends_in_layer_order():
    bank = MemoryBank()
    result = maturation(9, {
        2: selected([[0.3, 0.3]], [1]),
        0: selected([[0.1, 0.1], [0.2, 0.2]], [0, 2]),
    }, final_generation={0: 4, 2: 7})
    added = bank.absorb(result)
    assert added == 3
    assert len(bank) == 3
    assert np.array_equal(bank.labels, [0, 2, 1])  # layer 0 first
    assert bank.provenance == [
        {"query_id": 9, "layer": 0, "generation": 4},
        {"query_id": 9, "layer": 0, "generation": 4},
        {"query_id": 9, "layer": 2, "generation": 7},
    ]


def test_absorb_accumulates_across_queries():
    bank = MemoryBank()
    bank.absorb(maturation(0, {0: selected([[0.1, 0.1]], [0])}))
    bank.absorb(maturation(1, {0: selected([[0.9, 0.9]], [1])}))
    assert len(bank) == 2
    assert [p["query_id"] for p in bank.provenance] == [0, 1]


def test_absorb_sets_dimension_then_enforces_it():
    bank = MemoryBank()
    assert bank.dim is None
    bank.absorb(maturation(0, {0: selected([[0.1, 0.2, 0.3]], [0])}))
    assert bank.dim == 3
    with pytest.raises(DataError, match="dimension"):
        bank.absorb(maturation(1, {0: selected([[0.1, 0.2]], [0])}))


def test_absorb_rejects_out_of_box_cells():
    bank = MemoryBank()
    with pytest.raises(DataError, match=r"\[0, 1\]"):
        bank.absorb(maturation(0, {0: selected([[1.5, 0.0]], [0])}))


def test_absorb_empty_result_is_noop():
    bank = MemoryBank()
    assert bank.absorb(maturation(0, {})) == 0
    assert len(bank) == 0


def test_capacity_evicts_oldest_first():
    bank = MemoryBank(capacity=3)
    for q in range(5):
        bank.absorb(maturation(q, {0: selected([[q / 10, q / 10]], [0])}))
    assert len(bank) == 3
    assert [p["query_id"] for p in bank.provenance] == [2, 3, 4]
    assert np.allclose(bank.vectors[:, 0], [0.2, 0.3, 0.4])


def test_capacity_validated():
    with pytest.raises(ConfigError):
        MemoryBank(capacity=0)


def test_from_arrays_checks_inputs():
    with pytest.raises(DataError):
        MemoryBank.from_arrays(np.zeros((2, 2)), np.zeros(3, dtype=np.int64))
    with pytest.raises(DataError):
        MemoryBank.from_arrays(np.full((1, 2), 2.0), np.zeros(1,
                                                              dtype=np.int64))
    with pytest.raises(DataError):
        MemoryBank.from_arrays(np.zeros((1, 2)), np.array([-1]))
    with pytest.raises(DataError):
        MemoryBank.from_arrays(np.zeros((2, 2)), np.zeros(2, dtype=np.int64),
                               provenance=[{}])


def test_from_arrays_applies_capacity():
    bank = MemoryBank.from_arrays(np.linspace(0, 1, 10)[:, None],
                                  np.arange(10), capacity=4)
    assert len(bank) == 4
    assert np.array_equal(bank.labels, [6, 7, 8, 9])


def test_bank_save_load_round_trip(tmp_path):
    path = str(tmp_path / "bank.bin")
    bank = MemoryBank()
    bank.absorb(maturation(3, {1: selected([[0.4, 0.6]], [2])}))
    bank.save(path)
    loaded = MemoryBank.load(path)
    assert len(loaded) == 1
    assert np.array_equal(loaded.labels, bank.labels)
    assert np.allclose(loaded.vectors, bank.vectors, atol=1e-7)
    assert loaded.provenance == bank.provenance
    second = str(tmp_path / "bank2.bin")
    loaded.save(second)
    assert open(path, "rb").read() == open(second, "rb").read()
    assert open(path + ".json").read() == open(second + ".json").read()


def test_bank_load_without_sidecar_gets_empty_provenance(tmp_path):
    path = str(tmp_path / "bank.bin")
    save_vectors(path, np.array([[0.5, 0.5]]), np.array([0]))
    bank = MemoryBank.load(path)
    assert bank.provenance == [{}]


def test_bank_load_rejects_out_of_box(tmp_path):
    path = str(tmp_path / "bank.bin")
    rows = np.zeros(1, dtype=np.dtype([("label", "<u4"), ("vec", "<f4", (2,))]))
    rows["vec"][0] = [0.5, 1.5]
    with open(path, "wb") as fh:
        fh.write(b"RAILSMEM" + struct.pack("<II", 1, 2) + rows.tobytes())
    with pytest.raises(FormatError, match=r"\[0, 1\]"):
        MemoryBank.load(path)


def test_bank_load_applies_capacity(tmp_path):
    path = str(tmp_path / "bank.bin")
    save_vectors(path, np.linspace(0, 1, 6)[:, None], np.arange(6))
    bank = MemoryBank.load(path, capacity=2)
    assert np.array_equal(bank.labels, [4, 5])


# --- hardening -------------------------------------------------------------


def small_dataset():
    return Dataset(np.array([[0.1, 0.1], [0.9, 0.9]]), np.array([0, 1]),
                   class_count=2)


def test_harden_appends_bank_entries():
    bank = MemoryBank.from_arrays(np.array([[0.5, 0.5]]), np.array([1]))
    merged = harden(small_dataset(), bank)
    assert len(merged) == 3
    assert np.array_equal(merged.labels, [0, 1, 1])
    assert np.array_equal(merged.vectors[2], [0.5, 0.5])
    assert merged.class_count == 2


def test_harden_empty_bank_returns_same_object():
    data = small_dataset()
    assert harden(data, MemoryBank()) is data


def test_harden_rejects_dimension_mismatch():
    bank = MemoryBank.from_arrays(np.array([[0.5, 0.5, 0.5]]), np.array([0]))
    with pytest.raises(DataError, match="dimension"):
        harden(small_dataset(), bank)


def test_harden_rejects_label_overflow():
    bank = MemoryBank.from_arrays(np.array([[0.5, 0.5]]), np.array([7]))
    with pytest.raises(DataError, match="class count"):
        harden(small_dataset(), bank)
