import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stgt import autodiff as ad
from stgt.autodiff import Tensor
from stgt.config import ConfigError
from stgt.graph import collate, generate_synthetic
from stgt.gradcheck import finite_difference_check
from stgt.nn import ParameterStore
from stgt.serializer import (
    Serializer,
    aggregate_tokens,
    gumbel_noise,
    gumbel_normalize,
    serialize,
    similarity_scores,
)


def T(x):
    return Tensor(np.asarray(x, dtype=float))


class TestSimilarity:
    def test_zero_distance(self):
        assert similarity_scores(T([[1.0, 2.0]]), T([[1.0, 2.0]])).data[0, 0] == 1.0

    def test_unit_distance(self):
        assert similarity_scores(T([[1.0, 0.0]]), T([[0.0, 0.0]])).data[0, 0] == 0.5

    def test_three_four_five(self):
        s = similarity_scores(T([[3.0, 4.0]]), T([[0.0, 0.0]])).data[0, 0]
        assert s == pytest.approx(1 / 26, abs=1e-15)
        assert s == pytest.approx(0.038462, abs=1e-6)

    def test_range(self):
        rng = np.random.default_rng(0)
        s = similarity_scores(T(rng.normal(size=(9, 3)) * 5), T(rng.normal(size=(4, 3)))).data
        assert np.all(s > 0) and np.all(s <= 1)


class TestGumbelNormalize:
    def test_equal_scores_uniform(self):
        for tau in (0.01, 0.1, 1.0, 10.0):
            out = gumbel_normalize(T(np.full((3, 5), 0.4)), tau).data
            np.testing.assert_allclose(out, 0.2, atol=1e-15)

    def test_low_temperature_one_hot(self):
        scores = T([[0.2, 0.9, 0.5], [0.7, 0.1, 0.3]])
        out = gumbel_normalize(scores, 1e-3).data
        np.testing.assert_allclose(out, [[0, 1, 0], [1, 0, 0]], atol=1e-12)

    def test_noise_reproducible(self):
        a = gumbel_noise((6, 4), seed=3, example_id=11, epoch=2)
        b = gumbel_noise((6, 4), seed=3, example_id=11, epoch=2)
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, gumbel_noise((6, 4), seed=3, example_id=11, epoch=3))
        scores = T(np.random.default_rng(0).uniform(size=(6, 4)))
        assert gumbel_normalize(scores, 0.1, a).data.tobytes() == gumbel_normalize(scores, 0.1, b).data.tobytes()

    def test_serialize_rng(self):
        h, basis = T(np.ones((3, 2))), T(np.eye(2))
        g1, _ = serialize(h, basis, 0.1, "gumbel", np.random.default_rng(5))
        g2, _ = serialize(h, basis, 0.1, "gumbel", np.random.default_rng(5))
        assert g1.data.tobytes() == g2.data.tobytes()

    def test_bad_temperature(self):
        with pytest.raises(ConfigError):
            gumbel_normalize(T([[0.1, 0.2]]), 0.0)
        with pytest.raises(ConfigError):
            serialize(T([[0.1, 0.2]]), T([[0.0, 0.0]]), -1.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 20), st.integers(1, 10), st.floats(1e-3, 10.0), st.booleans(), st.integers(0, 2**31))
def test_rows_stochastic(n, m, tau, noisy, seed):
    rng = np.random.default_rng(seed)
    scores = similarity_scores(T(rng.normal(size=(n, 3))), T(rng.normal(size=(m, 3))))
    noise = rng.gumbel(size=(n, m)) if noisy else None
    s = gumbel_normalize(scores, tau, noise).data
    assert s.shape == (n, m)
    assert np.max(np.abs(s.sum(axis=1) - 1.0)) <= 1e-9
    assert np.all(s >= 0) and np.all(s <= 1)


class TestAggregate:
    def test_single_node(self):
        s = T([[0.2, 0.5, 0.3]])
        h = T([[1.0, -2.0]])
        g = aggregate_tokens(s, h).data[0]
        np.testing.assert_allclose(g, [[0.2, -0.4], [0.5, -1.0], [0.3, -0.6]], atol=1e-15)

    def test_degenerate_assignment(self):
        h = np.random.default_rng(1).normal(size=(4, 3))
        s = np.zeros((4, 3))
        s[:, 0] = 1.0
        g = aggregate_tokens(T(s), T(h)).data[0]
        np.testing.assert_allclose(g[0], h.sum(axis=0), atol=1e-15)
        assert not g[1:].any()

    def test_is_transpose_product(self):
        rng = np.random.default_rng(2)
        s, h = rng.uniform(size=(5, 3)), rng.normal(size=(5, 4))
        np.testing.assert_allclose(aggregate_tokens(T(s), T(h)).data[0], s.T @ h, atol=1e-14)

    def test_batched_graphs(self):
        rng = np.random.default_rng(3)
        s, h = rng.uniform(size=(5, 2)), rng.normal(size=(5, 3))
        owner = np.array([0, 0, 1, 1, 1])
        g = aggregate_tokens(T(s), T(h), owner, 2).data
        np.testing.assert_allclose(g[0], s[:2].T @ h[:2], atol=1e-14)
        np.testing.assert_allclose(g[1], s[2:].T @ h[2:], atol=1e-14)


def test_all_permutations_of_three_nodes():
    rng = np.random.default_rng(4)
    h, basis = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    base, _ = serialize(T(h), T(basis), 0.1)
    for perm in itertools.permutations(range(3)):
        g, _ = serialize(T(h[list(perm)]), T(basis), 0.1)
        np.testing.assert_allclose(g.data, base.data, rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2**31))
def test_invariance_and_bounds(n, seed):
    rng = np.random.default_rng(seed)
    h, basis = rng.normal(size=(n, 4)), rng.normal(size=(6, 4))
    g, b = serialize(T(h), T(basis), 0.1)
    assert g.shape == (6, 4)
    assert b.data is not None and b.shape == (6, 4)
    perm = rng.permutation(n)
    gp, _ = serialize(T(h[perm]), T(basis), 0.1)
    np.testing.assert_allclose(gp.data, g.data, rtol=0, atol=1e-10)
    s = gumbel_normalize(similarity_scores(T(h), T(basis)), 0.1).data
    bound = s.sum(axis=0) * np.linalg.norm(h, axis=1).max()
    assert np.all(np.linalg.norm(g.data, axis=1) <= bound + 1e-12)


def test_equal_rows_reproduce_vector():
    v = np.array([0.3, -1.2, 2.0])
    g, _ = serialize(T(np.tile(v, (5, 1))), T(np.random.default_rng(0).normal(size=(4, 3))), 0.1)
    # every row of S is the same distribution, so g_j = (sum_i s_ij) v = N s_j v
    s = gumbel_normalize(similarity_scores(T(v[None]), T(np.random.default_rng(0).normal(size=(4, 3)))), 0.1).data[0]
    np.testing.assert_allclose(g.data, 5 * s[:, None] * v[None], atol=1e-12)


def test_basis_gradient():
    rng = np.random.default_rng(6)
    h = T(rng.normal(size=(5, 4)))
    basis = T(rng.normal(size=(3, 4)) * 0.5)
    w = rng.normal(size=(3, 4))
    assert finite_difference_check(lambda b: ad.sum(ad.mul(serialize(h, b, 0.1)[0], w)), basis) < 1e-4


@pytest.mark.parametrize("m", [1, 4, 8])
def test_fixed_length_for_every_size(m):
    store = ParameterStore(np.random.default_rng(0))
    ser = Serializer(store, m, 6, noise="gumbel")
    for n in range(1, 21):
        data = generate_synthetic("triangle-count", 2, (n, n), seed=n)
        batch = collate(data)
        h = Tensor(np.random.default_rng(n).normal(size=(batch.num_nodes, 6)))
        for training in (False, True):
            g = ser(h, batch, training=training, epoch=1)
            assert g.shape == (2, m, 6)
            np.testing.assert_allclose(ser.last_assignment.sum(axis=1), 1.0, atol=1e-9)


def test_training_noise_depends_on_example_not_batch_position():
    store = ParameterStore(np.random.default_rng(0))
    ser = Serializer(store, 4, 6, noise="gumbel", seed=9)
    data = generate_synthetic("triangle-count", 3, (3, 6), seed=1)
    h_all = np.random.default_rng(2).normal(size=(sum(d.graph.num_nodes for d in data), 6))
    together = ser(Tensor(h_all), collate(data, [10, 11, 12]), training=True, epoch=4).data
    n0 = data[0].graph.num_nodes
    alone = ser(Tensor(h_all[n0:n0 + data[1].graph.num_nodes]), collate([data[1]], [11]), training=True, epoch=4).data
    np.testing.assert_allclose(together[1], alone[0], atol=1e-12)
