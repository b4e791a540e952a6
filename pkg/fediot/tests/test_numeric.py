import numpy as np
import pytest

from fediot.errors import ConfigurationError
from fediot.numeric import RngStream, as_matrix, col_mean_std, matmul, rng_draw, rng_shuffle


def test_matmul_examples():
    """Identity and hand-computed products."""
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(np.eye(2), m), m)
    np.testing.assert_array_equal(matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]])), [[11.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    ref = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(4):
                ref[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(matmul(a, b), ref, atol=1e-12, rtol=0)


def test_matmul_associative():
    rng = np.random.default_rng(2)
    a, b, c = rng.normal(size=(4, 6)), rng.normal(size=(6, 5)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), rtol=1e-9, atol=1e-12)


def test_matmul_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_col_mean_std_examples():
    mean, std = col_mean_std(np.array([[1.0, 0.0], [1.0, 2.0]]))
    np.testing.assert_array_equal(mean, [1.0, 1.0])
    np.testing.assert_array_equal(std, [0.0, 1.0])


def test_col_mean_std_two_pass_oracle():
    m = np.random.default_rng(3).normal(5.0, 2.0, size=(100, 3))
    mean, std = col_mean_std(m)
    for j in range(3):
        mu = sum(m[:, j]) / 100
        var = sum((x - mu) ** 2 for x in m[:, j]) / 100
        assert mean[j] == pytest.approx(mu, abs=1e-12)
        assert std[j] == pytest.approx(var ** 0.5, abs=1e-12)


def test_standardize_then_rescale_recovers_input():
    m = np.random.default_rng(4).uniform(-50, 50, size=(40, 6))
    mean, std = col_mean_std(m)
    np.testing.assert_allclose(((m - mean) / std) * std + mean, m, rtol=1e-9, atol=1e-9)


def test_col_mean_std_empty():
    with pytest.raises(ConfigurationError):
        col_mean_std(np.zeros((0, 3)))


def test_as_matrix_rejects_vectors():
    with pytest.raises(ConfigurationError):
        as_matrix([1.0, 2.0])
    with pytest.raises(ConfigurationError):
        as_matrix([[1.0, 2.0]], cols=3)


def test_rng_same_label_replays():
    stream = RngStream(42).derive("local", client=3, round=1)
    np.testing.assert_array_equal(rng_draw(stream, 5), rng_draw(stream, 5))
    assert (stream.purpose, stream.client, stream.round) == ("local", 3, 1)


def test_rng_distinct_labels_differ():
    root = RngStream(42)
    draws = [
        rng_draw(root.derive("local", client=0, round=0), 8),
        rng_draw(root.derive("local", client=1, round=0), 8),
        rng_draw(root.derive("local", client=0, round=1), 8),
        rng_draw(root.derive("select", round=0), 8),
        rng_draw(RngStream(43).derive("local", client=0, round=0), 8),
    ]
    for i in range(len(draws)):
        for j in range(i + 1, len(draws)):
            assert not np.array_equal(draws[i], draws[j]), f"streams {i} and {j} collide"


def test_rng_draw_range_and_shuffle():
    stream = RngStream(7, "test")
    values = rng_draw(stream, 1000)
    assert values.min() >= 0.0 and values.max() < 1.0
    perm = rng_shuffle(stream, 50)
    assert sorted(perm.tolist()) == list(range(50))
    assert rng_draw(stream, 0).size == 0
    with pytest.raises(ConfigurationError):
        rng_shuffle(stream, -1)
