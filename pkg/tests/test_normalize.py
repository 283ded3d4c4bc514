import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import random_graph
from learnphys.normalize import EPS, GraphNormalizer, NormStats, denormalize, normalize

rows = st.integers(1, 20).flatmap(
    lambda n: arrays(np.float64, (n, 3), elements=st.floats(-100, 100, allow_nan=False))
)


def test_accumulate_empty_is_unchanged():
    s = NormStats.empty(2).accumulate([[1.0, 2.0]])
    assert s.accumulate(np.zeros((0, 2))) is s


def test_mean_and_population_std():
    s = NormStats.empty(1).accumulate(np.array([[1.0], [2.0], [3.0]]))
    x = np.array([1.0, 2.0, 3.0])
    # two-pass oracle
    assert s.mean[0] == pytest.approx(x.mean())
    assert s.std[0] == pytest.approx(np.sqrt(np.sum((x - x.mean()) ** 2) / 3))
    assert s.std[0] == pytest.approx(np.sqrt(2 / 3))


@settings(max_examples=50, deadline=None)
@given(rows, rows)
def test_accumulate_is_concatenation(a, b):
    s1 = NormStats.empty(3).accumulate(a).accumulate(b)
    s2 = NormStats.empty(3).accumulate(np.concatenate([a, b]))
    np.testing.assert_allclose(s1.mean, s2.mean, atol=1e-9)
    # sum-of-squares variance cancels: its std error scales as sqrt(machine eps) * |x|
    scale = 1 + np.abs(np.concatenate([a, b])).max()
    np.testing.assert_allclose(s1.std, s2.std, atol=1e-7 * scale)


def test_width_mismatch_rejected():
    with pytest.raises(ValueError):
        NormStats.empty(2).accumulate(np.ones((3, 3)))
    with pytest.raises(ValueError):
        NormStats.empty(2, eps=0)


def test_constant_column_uses_floor_and_inverts():
    s = NormStats.empty(2).accumulate(np.array([[5.0, 1.0], [5.0, 3.0]]))
    x = np.array([[5.5, 2.0]])
    z = normalize(s, x)
    assert z[0, 0] == pytest.approx(0.5 / EPS)
    np.testing.assert_array_equal(denormalize(s, z)[:, 0], x[:, 0])


def test_custom_floor():
    s = NormStats.empty(1, eps=1e-4).accumulate(np.zeros((5, 1)))
    assert normalize(s, np.array([[1e-4]]))[0, 0] == pytest.approx(1.0)


def test_standard_normal_samples():
    x = np.random.default_rng(0).normal(size=(10_000, 4))
    s = NormStats.empty(4).accumulate(x)
    assert np.all(np.abs(normalize(s, x).mean(axis=0)) < 0.1)


@settings(max_examples=50, deadline=None)
@given(rows)
def test_round_trip(x):
    s = NormStats.empty(3).accumulate(x).accumulate(x[::-1] + 1)
    np.testing.assert_allclose(denormalize(s, normalize(s, x)), x, atol=1e-12 * max(1, np.abs(x).max()) / EPS * 1e-4)


def test_fitted_data_is_standardised():
    x = np.random.default_rng(1).normal(3, 7, size=(500, 3))
    z = normalize(NormStats.empty(3).accumulate(x), x)
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(z.var(axis=0), 1, atol=1e-6)


def test_inactive_stats_are_identity():
    x = np.array([[1.0, 2.0]])
    assert normalize(NormStats.empty(2), x) is x
    assert normalize(NormStats.empty(2).accumulate(x), x) is x


def test_graph_normalizer_and_serialization():
    rng = np.random.default_rng(2)
    graphs = [random_graph(rng) for _ in range(4)]
    norm = GraphNormalizer.empty((2, 3, 2), eps=1e-4)
    for g in graphs:
        norm = norm.accumulate(g)
    back = GraphNormalizer.from_arrays(norm.to_arrays("n"), "n")
    assert back.nodes.eps == 1e-4
    g = graphs[0]
    a, b = norm.normalize(g), back.normalize(g)
    np.testing.assert_array_equal(a.nodes, b.nodes)
    np.testing.assert_allclose(norm.denormalize(a).edges, g.edges, atol=1e-12)
    # normalising never mutates the statistics
    assert norm.nodes.count == back.nodes.count == 16
