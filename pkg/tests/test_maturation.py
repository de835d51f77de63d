import numpy as np
import pytest

from rails import (
    ConfigError,
    DataError,
    Population,
    SelectedData,
    consensus,
    select_plasma_memory,
)


def make_population(affinities, labels=None):
    affinities = np.asarray(affinities, dtype=np.float64)
    n = affinities.shape[0]
    if labels is None:
        labels = np.zeros(n, dtype=np.int64)
    vectors = np.arange(n, dtype=np.float64)[:, None] / max(n, 1)
    return Population(vectors=vectors, labels=np.asarray(labels),
                      affinities=affinities, generation=3)


def test_harvest_sizes_follow_ceil_rule():
    pop = make_population(-np.arange(1000, dtype=np.float64))
    plasma, memory = select_plasma_memory(pop, 0.05, 0.25)
    assert len(plasma) == 50
    assert len(memory) == 250


def test_harvest_sizes_round_up():
    pop = make_population(-np.arange(7, dtype=np.float64))
    plasma, memory = select_plasma_memory(pop, 0.05, 0.25)
    # ceil(0.35) = 1 and ceil(1.75) = 2
    assert len(plasma) == 1
    assert len(memory) == 2


def test_plasma_is_prefix_of_memory():
    rng = np.random.default_rng(4)
    pop = make_population(-rng.random(60))
    plasma, memory = select_plasma_memory(pop, 0.1, 0.5)
    assert np.array_equal(plasma.member_indices,
                          memory.member_indices[:len(plasma)])


def test_harvest_orders_by_descending_affinity():
    pop = make_population([-3.0, -1.0, -2.0, -0.5])
    plasma, memory = select_plasma_memory(pop, 0.5, 1.0)
    assert np.array_equal(plasma.member_indices, [3, 1])
    assert np.array_equal(memory.member_indices, [3, 1, 2, 0])
    assert np.array_equal(memory.affinities, [-0.5, -1.0, -2.0, -3.0])


def test_harvest_ties_prefer_lower_member_index():
    pop = make_population([-1.0, -2.0, -1.0, -1.0])
    plasma, _ = select_plasma_memory(pop, 0.75, 1.0)
    assert np.array_equal(plasma.member_indices, [0, 2, 3])


def test_harvest_known_strictly_decreasing_example():
    pop = make_population([0.0, -1.0, -2.0, -3.0, -4.0])
    plasma, _ = select_plasma_memory(pop, 0.2, 0.4)
    assert np.array_equal(plasma.affinities, [0.0])
    _, memory = select_plasma_memory(pop, 0.2, 0.4)
    assert np.array_equal(memory.affinities, [0.0, -1.0])


def test_harvest_copies_do_not_alias_population():
    pop = make_population([-1.0, -2.0])
    plasma, _ = select_plasma_memory(pop, 1.0, 1.0)
    plasma.vectors[0, 0] = 123.0
    assert pop.vectors[0, 0] != 123.0


def test_harvest_carries_labels():
    pop = make_population([-1.0, -4.0, -2.0], labels=[2, 0, 1])
    _, memory = select_plasma_memory(pop, 0.5, 1.0)
    assert np.array_equal(memory.labels, [2, 1, 0])


@pytest.mark.parametrize("pf,mf", [
    (0.0, 0.5),
    (-0.1, 0.5),
    (0.5, 0.25),
    (0.5, 1.5),
    (1.2, 1.3),
])
def test_harvest_rejects_bad_fractions(pf, mf):
    pop = make_population([-1.0, -2.0])
    with pytest.raises(ConfigError):
        select_plasma_memory(pop, pf, mf)


def test_harvest_rejects_empty_population():
    pop = Population(vectors=np.zeros((0, 2)),
                     labels=np.zeros(0, dtype=np.int64),
                     affinities=np.zeros(0), generation=0)
    with pytest.raises(DataError):
        select_plasma_memory(pop, 0.05, 0.25)


# --- consensus ----------------------------------------------------------


def selected(labels):
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    return SelectedData(vectors=np.zeros((n, 2)), labels=labels,
                        affinities=np.zeros(n),
                        member_indices=np.arange(n))


def test_consensus_majority_across_layers():
    pred = consensus({0: selected([1, 1, 0]), 1: selected([1, 2, 2])},
                     class_count=3)
    assert pred.label == 1
    assert np.array_equal(pred.votes, [1, 3, 2])
    assert np.isclose(pred.confidence, 0.5)


def test_consensus_tie_goes_to_smallest_class():
    pred = consensus({0: selected([2, 2, 1, 1])}, class_count=3)
    assert pred.label == 1
    assert np.isclose(pred.confidence, 0.5)


def test_consensus_single_member_is_certain():
    pred = consensus({5: selected([3])}, class_count=4)
    assert pred.label == 3
    assert pred.confidence == 1.0
    assert np.array_equal(pred.votes, [0, 0, 0, 1])


def test_consensus_pools_layers_equally():
    # one layer with 4 votes, one with 2: members count, layers do not
    pred = consensus({0: selected([0, 0, 0, 0]), 1: selected([1, 1])},
                     class_count=2)
    assert pred.label == 0
    assert np.isclose(pred.confidence, 4 / 6)


def test_consensus_rejects_empty_mapping():
    with pytest.raises(DataError):
        consensus({}, class_count=2)


def test_consensus_rejects_empty_plasma():
    with pytest.raises(DataError):
        consensus({0: selected([])}, class_count=2)


def test_consensus_rejects_out_of_range_labels():
    with pytest.raises(DataError):
        consensus({0: selected([0, 5])}, class_count=3)


def test_consensus_rejects_degenerate_class_count():
    with pytest.raises(DataError):
        consensus({0: selected([0])}, class_count=1)
