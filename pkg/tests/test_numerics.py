import numpy as np
import pytest

from rails import ConfigError, affinity, derive_stream
from rails.numerics import affinities_to_point

identity = lambda v: v


def test_affinity_of_point_with_itself_is_zero():
    x = np.array([0.2, 0.9, 0.4])
    assert affinity(identity, x, x) == 0.0


def test_affinity_is_symmetric():
    rng = np.random.default_rng(3)
    a, b = rng.random(6), rng.random(6)
    assert affinity(identity, a, b) == affinity(identity, b, a)


def test_affinity_3_4_5_triangle():
    assert affinity(identity, np.array([0.0, 3.0]), np.array([4.0, 0.0])) == -5.0


def test_affinity_through_one_dense_relu_layer():
    # identity weights + relu leave these unit vectors unchanged
    w = np.eye(2)

    def fmap(v):
        return np.maximum(w @ v, 0.0)

    got = affinity(fmap, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert got == -np.sqrt(2.0)


def test_affinity_never_positive():
    rng = np.random.default_rng(11)
    for _ in range(50):
        a, b = rng.random(4), rng.random(4)
        assert affinity(identity, a, b) <= 0.0


def test_affinity_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        affinity(identity, np.zeros(4), np.zeros(2))


def test_affinities_to_point_matches_scalar():
    rng = np.random.default_rng(7)
    feats = rng.random((20, 5))
    fx = rng.random(5)
    batch = affinities_to_point(feats, fx)
    for i in range(20):
        assert batch[i] == pytest.approx(-np.linalg.norm(feats[i] - fx),
                                         rel=0, abs=1e-12)


def test_derive_stream_is_reproducible():
    a = derive_stream(42, 3, "demo").random(8)
    b = derive_stream(42, 3, "demo").random(8)
    assert np.array_equal(a, b)


def test_derive_stream_separates_purposes_queries_seeds():
    base = derive_stream(42, 3, "demo").random(8)
    assert not np.array_equal(base, derive_stream(42, 3, "other").random(8))
    assert not np.array_equal(base, derive_stream(42, 4, "demo").random(8))
    assert not np.array_equal(base, derive_stream(43, 3, "demo").random(8))


def test_derive_stream_accepts_negative_seed():
    a = derive_stream(-1, 0, "demo").random(4)
    b = derive_stream(-1, 0, "demo").random(4)
    assert np.array_equal(a, b)


def test_derive_stream_rejects_bad_purpose():
    with pytest.raises(ConfigError):
        derive_stream(1, 0, "")
