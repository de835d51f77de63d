import numpy as np
import pytest

from rails import (
    CalibrationSet,
    ConfigError,
    DataError,
    Dataset,
    MemoryBank,
    RailsConfig,
    ReferenceFeatures,
    rails_predict,
    train_network,
)
from rails.featmap import init_network
from rails.harness import synth_dataset


@pytest.fixture(scope="module")
def setup():
    data = synth_dataset(classes=3, per_class=60, dim=6, spread=0.8,
                         noise=0.05, seed=2)
    net = train_network(data, [6, 12, 3], epochs=25, learning_rate=0.2,
                        seed=2)
    assert np.mean(net.predict_labels(data.vectors) == data.labels) > 0.95
    cfg = RailsConfig(neighbors_per_class=3, population_size=30,
                      max_generations=10, temperature=0.2, seed=9)
    return data, net, cfg


def test_config_resolves_default_layers(setup):
    _, net, cfg = setup
    assert cfg.resolve_layers(net) == (0, 1)


def test_config_layer_validation(setup):
    _, net, _ = setup
    with pytest.raises(ConfigError):
        RailsConfig(layers=[5]).resolve_layers(net)
    with pytest.raises(ConfigError):
        RailsConfig(layers=[-1]).resolve_layers(net)
    with pytest.raises(ConfigError):
        RailsConfig(layers=[]).resolve_layers(net)
    assert RailsConfig(layers=[1, 0, 1]).resolve_layers(net) == (0, 1)


def test_config_temperature_forms(setup):
    _, net, _ = setup
    layers = (0, 1)
    scalar = RailsConfig(temperature=2.0)
    assert scalar.temperature_for(0, layers) == 2.0
    assert scalar.temperature_for(1, layers) == 2.0
    listed = RailsConfig(temperature=[3.0, 18.0])
    assert listed.temperature_for(0, layers) == 3.0
    assert listed.temperature_for(1, layers) == 18.0
    mapped = RailsConfig(temperature={0: 1.5, 1: 4.0})
    assert mapped.temperature_for(1, layers) == 4.0
    with pytest.raises(ConfigError):
        RailsConfig(temperature=[1.0]).temperature_for(1, layers)
    with pytest.raises(ConfigError):
        RailsConfig(temperature={0: 1.0}).temperature_for(1, layers)


def test_config_validate_catches_bad_fields(setup):
    _, net, _ = setup
    with pytest.raises(ConfigError):
        RailsConfig(neighbors_per_class=0).validate(net)
    with pytest.raises(ConfigError):
        RailsConfig(dknn_neighbors=0).validate(net)
    with pytest.raises(ConfigError):
        RailsConfig(plasma_fraction=0.5, memory_fraction=0.2).validate(net)
    with pytest.raises(ConfigError):
        RailsConfig(population_size=0).validate(net)
    with pytest.raises(ConfigError):
        RailsConfig(temperature=0.0).validate(net)


def test_predict_correct_on_clean_queries(setup):
    data, net, cfg = setup
    hits = 0
    for i in range(10):
        pred = rails_predict(data.vectors[i], data, net, cfg, query_id=i)
        hits += pred.label == data.labels[i]
    assert hits >= 9


def test_predict_is_deterministic(setup):
    data, net, cfg = setup
    a = rails_predict(data.vectors[3], data, net, cfg, query_id=3)
    b = rails_predict(data.vectors[3], data, net, cfg, query_id=3)
    assert a.label == b.label
    assert a.confidence == b.confidence
    assert np.array_equal(a.votes, b.votes)
    for layer in a.traces:
        assert a.traces[layer].csv_text() == b.traces[layer].csv_text()
    for layer in a.maturation.memory:
        assert np.array_equal(a.maturation.memory[layer].vectors,
                              b.maturation.memory[layer].vectors)


def test_predict_varies_with_query_id(setup):
    data, net, cfg = setup
    a = rails_predict(data.vectors[3], data, net, cfg, query_id=0)
    b = rails_predict(data.vectors[3], data, net, cfg, query_id=1)
    same = all(
        np.array_equal(a.maturation.memory[l].vectors,
                       b.maturation.memory[l].vectors)
        for l in a.maturation.memory)
    assert not same


def test_predict_confidence_and_votes_consistent(setup):
    data, net, cfg = setup
    pred = rails_predict(data.vectors[0], data, net, cfg)
    assert 0.0 < pred.confidence <= 1.0
    assert pred.votes.sum() > 0
    assert pred.label == int(np.argmax(pred.votes))
    assert np.isclose(pred.confidence,
                      pred.votes[pred.label] / pred.votes.sum())


def test_predict_harvest_sizes(setup):
    data, net, cfg = setup
    pred = rails_predict(data.vectors[0], data, net, cfg)
    # ceil(0.05 * 30) = 2 plasma, ceil(0.25 * 30) = 8 memory per layer
    for layer in (0, 1):
        assert len(pred.maturation.plasma[layer]) == 2
        assert len(pred.maturation.memory[layer]) == 8
    assert pred.votes.sum() == 4  # 2 plasma per layer, 2 layers


def test_predict_sensing_fields(setup):
    data, net, cfg = setup
    pred = rails_predict(data.vectors[0], data, net, cfg)
    assert pred.dknn_label is None and pred.dknn_credibility is None
    cal = CalibrationSet.build(data.vectors[:20], data.labels[:20], data,
                               net, cfg.resolve_layers(net),
                               cfg.dknn_neighbors)
    sensed = rails_predict(data.vectors[0], data, net, cfg, calibration=cal)
    assert sensed.dknn_label is not None
    assert 0.0 <= sensed.dknn_credibility <= 1.0
    # sensing is advisory: the vote outcome does not change
    assert sensed.label == pred.label


def test_predict_with_memory_bank(setup):
    data, net, cfg = setup
    bank = MemoryBank.from_arrays(
        np.tile(data.vectors[0], (cfg.neighbors_per_class, 1)),
        np.full(cfg.neighbors_per_class, data.labels[0], dtype=np.int64))
    pred = rails_predict(data.vectors[0], data, net, cfg, memory=bank)
    assert pred.label == data.labels[0]


def test_predict_uses_prebuilt_cache(setup):
    data, net, cfg = setup
    layers = cfg.resolve_layers(net)
    cache = ReferenceFeatures.build(data, net, layers)
    a = rails_predict(data.vectors[1], data, net, cfg, query_id=1,
                      features=cache)
    b = rails_predict(data.vectors[1], data, net, cfg, query_id=1)
    assert a.label == b.label
    assert np.array_equal(a.votes, b.votes)


def test_predict_rejects_class_count_mismatch(setup):
    data, _, cfg = setup
    other = init_network([6, 8, 5], seed=0)
    with pytest.raises(DataError, match="classes"):
        rails_predict(data.vectors[0], data, other, cfg)


def test_predict_rejects_population_below_neighbor_total(setup):
    data, net, _ = setup
    tiny = RailsConfig(neighbors_per_class=3, population_size=5,
                       max_generations=2)
    with pytest.raises(ConfigError, match="smaller"):
        rails_predict(data.vectors[0], data, net, tiny)


def test_trace_attached_per_layer(setup):
    data, net, cfg = setup
    pred = rails_predict(data.vectors[2], data, net, cfg, query_id=2)
    assert set(pred.traces) == {0, 1}
    for layer, trace in pred.traces.items():
        assert trace.layer == layer
        assert trace.generations[0] == 0
        assert trace.final_generation == pred.maturation.final_generation[layer]
