import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stgt.autodiff import Tensor
from stgt.config import ConfigError
from stgt.nn import ParameterStore
from stgt.predictor import (
    PredictionHead,
    UndefinedMetricError,
    loss,
    metric_auc,
    metric_mae,
    metric_record,
)


def auc_by_pairs(scores, labels):
    # brute-force oracle over every (positive, negative) pair
    pairs = [(p, n) for p, lp in zip(scores, labels) if lp == 1 for n, ln in zip(scores, labels) if ln == 0]
    return sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in pairs) / len(pairs)


def head(width, seed=0):
    return PredictionHead(ParameterStore(np.random.default_rng(seed)), width)


class TestHead:
    def test_row_major_layout(self):
        g = np.arange(6, dtype=float).reshape(1, 2, 3)
        h = head(6)
        captured = {}
        inner = h.ffn
        h.ffn = lambda x: captured.setdefault("x", x) and inner(x)
        h(Tensor(g))
        np.testing.assert_array_equal(captured["x"].data[0], [0, 1, 2, 3, 4, 5])

    def test_order_sensitive(self):
        h = head(6, seed=1)
        g = np.random.default_rng(1).normal(size=(1, 2, 3))
        swapped = g[:, ::-1, :]
        assert h(Tensor(g)).data[0] != h(Tensor(swapped)).data[0]

    def test_zero_weights(self):
        h = head(6)
        for t in (h.ffn.w1, h.ffn.b1, h.ffn.w2, h.ffn.b2):
            t.data[...] = 0.0
        assert h(Tensor(np.ones((2, 2, 3)))).data.tolist() == [0.0, 0.0]

    def test_hidden_width(self):
        assert head(128).ffn.w1.shape == (128, 64)
        assert head(7).ffn.w1.shape == (7, 4)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            head(6)(Tensor(np.ones((1, 2, 4))))


class TestLoss:
    def test_exact_fit(self):
        assert loss(Tensor(np.array([1.5, -2.0])), np.array([1.5, -2.0]), "regression").item() == 0.0

    def test_bce_at_zero_logit(self):
        assert loss(Tensor(np.array([0.0])), np.array([1.0]), "classification").item() == pytest.approx(math.log(2), abs=1e-15)
        assert math.log(2) == pytest.approx(0.69315, abs=1e-5)

    def test_batch_mae(self):
        assert loss(Tensor(np.array([1.0, 3.0])), np.array([2.0, 2.0]), "regression").item() == 1.0

    def test_bce_large_logits_stable(self):
        out = loss(Tensor(np.array([800.0, -800.0])), np.array([1.0, 0.0]), "classification").item()
        assert out == pytest.approx(0.0, abs=1e-300)

    def test_unknown_task(self):
        with pytest.raises(ConfigError):
            loss(Tensor(np.zeros(1)), np.zeros(1), "ranking")

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=1, max_size=30))
    def test_mae_metric_equals_loss(self, pairs):
        p, t = np.array(pairs).T
        assert metric_mae(p, t) == pytest.approx(loss(Tensor(p), t, "regression").item(), rel=1e-12, abs=1e-12)


class TestAuc:
    def test_perfect(self):
        assert metric_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_equal(self):
        assert metric_auc([0.3] * 5, [0, 1, 1, 0, 1]) == 0.5

    def test_hand_example(self):
        assert auc_by_pairs([0.9, 0.8, 0.3], [1, 0, 1]) == 0.5
        assert metric_auc([0.9, 0.8, 0.3], [1, 0, 1]) == 0.5

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            metric_auc([0.1, 0.2], [1, 1])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(-5, 5), st.integers(0, 1)), min_size=2, max_size=40))
    def test_matches_pair_enumeration(self, rows):
        scores, labels = zip(*rows)
        if len(set(labels)) < 2:
            return
        assert metric_auc(scores, labels) == pytest.approx(auc_by_pairs(scores, labels), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(-10, 10), st.integers(0, 1)), min_size=2, max_size=40),
           st.floats(0.1, 5.0), st.floats(-3, 3))
    def test_invariant_to_monotone_maps(self, rows, a, b):
        scores, labels = zip(*rows)
        if len(set(labels)) < 2:
            return
        scores = np.array(scores)
        for f in (lambda s: a * s + b, lambda s: np.arctan(s), lambda s: np.exp(s / 5.0)):
            mapped = f(scores)
            # a strictly increasing map can still merge near-equal floats; skip those draws
            if len(set(mapped.tolist())) != len(set(scores.tolist())):
                continue
            assert metric_auc(mapped, labels) == pytest.approx(metric_auc(scores, labels), abs=1e-12)


def test_metric_record_format():
    import json

    rec = json.loads(metric_record("regression", 0.25, "test", 3))
    assert rec == {"metric": "mae", "value": 0.25, "split": "test", "seed": 3}
    assert json.loads(metric_record("classification", 0.8, "valid", 0))["metric"] == "auc"
