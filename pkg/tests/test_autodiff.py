import math
import zlib

import numpy as np
import pytest

from stgt import autodiff as ad
from stgt.autodiff import NumericDomainError, Tape, Tensor
from stgt.gradcheck import finite_difference_check


def rows(x):
    return Tensor(np.array(x, dtype=float))


class TestSoftmaxRows:
    def test_symmetric_row(self):
        np.testing.assert_array_equal(ad.softmax_rows(rows([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_two_entries(self):
        # exp(1) / (exp(1) + exp(2)) evaluated directly
        e1, e2 = math.exp(1.0), math.exp(2.0)
        expected = [e1 / (e1 + e2), e2 / (e1 + e2)]
        out = ad.softmax_rows(rows([[1.0, 2.0]])).data[0]
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)
        np.testing.assert_allclose(out, [0.26894, 0.73106], atol=1e-5)

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        r = rng.normal(size=(4, 6))
        base = ad.softmax_rows(Tensor(r)).data
        for c in (-50.0, 3.0, 700.0):
            np.testing.assert_allclose(ad.softmax_rows(Tensor(r + c)).data, base, atol=1e-12)

    def test_rows_sum_to_one_and_positive(self):
        rng = np.random.default_rng(1)
        out = ad.softmax_rows(Tensor(rng.normal(scale=10, size=(50, 7)))).data
        assert np.all(out > 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_mask_zeroes_excluded_entries(self):
        out = ad.softmax_rows(rows([[1.0, 5.0, 2.0]]), mask=np.array([[True, False, True]])).data
        assert out[0, 1] == 0.0
        assert out[0].sum() == pytest.approx(1.0, abs=1e-15)

    def test_non_finite_input(self):
        with pytest.raises(NumericDomainError):
            ad.softmax_rows(rows([[0.0, np.nan]]))

    def test_gradient_of_uniform_row_shift_is_zero(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
            w = rng.normal(size=(3, 5))
            with Tape() as tape:
                y = ad.sum(ad.mul(ad.softmax_rows(x), w))
            tape.backward(y)
            # derivative along x_r + c*1 is the row sum of the gradient
            assert np.max(np.abs(x.grad.sum(axis=1))) < 1e-10


class TestLayerNorm:
    def norm(self, v, gain, bias):
        d = len(v)
        return ad.layer_norm(rows(v), Tensor(np.full(d, gain)), Tensor(np.full(d, bias))).data

    def test_already_normal(self):
        np.testing.assert_allclose(self.norm([1.0, -1.0], 1.0, 0.0), [1.0, -1.0], atol=1e-5)

    def test_constant_vector_collapses_to_bias(self):
        np.testing.assert_array_equal(self.norm([5.0, 5.0, 5.0], 1.0, 0.0), [0.0, 0.0, 0.0])

    def test_gain_and_bias(self):
        # mean 1, variance 1: (x - 1) / sqrt(1 + 1e-5) * 2 + 1
        s = 1.0 / math.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(self.norm([0.0, 2.0], 2.0, 1.0), [1 - 2 * s, 1 + 2 * s], atol=1e-15)
        np.testing.assert_allclose(self.norm([0.0, 2.0], 2.0, 1.0), [-1.0, 3.0], atol=1e-4)

    def test_unit_gain_gives_zero_mean_unit_variance(self):
        v = np.random.default_rng(3).normal(size=(10, 9)) * 4 + 2
        out = ad.layer_norm(Tensor(v), Tensor(np.ones(9)), Tensor(np.zeros(9))).data
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-5)


class TestFiniteDifferenceCheck:
    def test_sum_of_squares(self):
        x = Tensor(np.random.default_rng(4).normal(size=(3, 4)))
        assert finite_difference_check(lambda t: ad.sum(ad.mul(t, t)), x) < 1e-6

    def test_detects_corrupted_backward(self):
        def bad_square(t):
            # backward sign flipped on purpose
            return ad.apply_op(t.data**2, (t,), lambda g: (-2.0 * t.data * g,), "bad_square")

        x = Tensor(np.random.default_rng(5).normal(size=(4,)) + 2.0)
        assert finite_difference_check(lambda t: ad.sum(bad_square(t)), x) > 1e-2

    def test_epsilon_range_enforced(self):
        with pytest.raises(ValueError):
            finite_difference_check(lambda t: ad.sum(t), Tensor(np.ones(2)), epsilon=1e-2)

    def test_non_scalar_function_rejected(self):
        with pytest.raises(ValueError):
            finite_difference_check(lambda t: ad.scale(t, 2.0), Tensor(np.ones(2)))


def _shape(rng, ndim=2):
    return tuple(int(k) for k in rng.integers(1, 5, size=ndim))


def _matmul(rng):
    n, k, m = _shape(rng, 3)
    return [rng.normal(size=(n, k)), rng.normal(size=(k, m))], lambda a, b: ad.matmul(a, b)


def _batched_matmul(rng):
    b, n, k, m = _shape(rng, 4)
    return [rng.normal(size=(b, n, k)), rng.normal(size=(k, m))], lambda a, w: ad.matmul(a, w)


def _add(rng):
    s = _shape(rng)
    return [rng.normal(size=s), rng.normal(size=s[1:])], lambda a, b: ad.add(a, b)


def _mul(rng):
    s = _shape(rng)
    return [rng.normal(size=s), rng.normal(size=s)], lambda a, b: ad.mul(a, b)


def _softmax(rng):
    return [rng.normal(size=_shape(rng))], lambda a: ad.softmax_rows(a)


def _layer_norm(rng):
    n, d = _shape(rng)
    # width 2 normalises every input to +-gain, leaving an O(eps) x-gradient
    d += 2
    return ([rng.normal(size=(n, d)), rng.normal(size=d), rng.normal(size=d)],
            lambda x, g, b: ad.layer_norm(x, g, b))


def _concat(rng):
    n, a, b = _shape(rng, 3)
    return [rng.normal(size=(n, a)), rng.normal(size=(n, b))], lambda x, y: ad.concat([x, y], axis=1)


def _sum(rng):
    return [rng.normal(size=_shape(rng))], lambda a: ad.sum(a, axis=0)


def _nonlinearity(rng):
    return [rng.normal(size=_shape(rng))], lambda a: ad.silu(a)


def _softplus(rng):
    return [rng.normal(size=_shape(rng))], lambda a: ad.softplus(a)


def _gather(rng):
    n, d = _shape(rng)
    idx = rng.integers(0, n, size=int(rng.integers(1, 8)))
    return [rng.normal(size=(n, d))], lambda t: ad.gather_rows(t, idx)


def _scatter(rng):
    e, d = _shape(rng)
    n = int(rng.integers(1, 5))
    idx = rng.integers(0, n, size=e)
    return [rng.normal(size=(e, d))], lambda t: ad.scatter_add_rows(t, idx, n)


def _sqdist(rng):
    n, m, d = _shape(rng, 3)
    return [rng.normal(size=(n, d)), rng.normal(size=(m, d))], lambda a, b: ad.pairwise_sqdist(a, b)


def _reciprocal(rng):
    return [rng.uniform(0.5, 2.0, size=_shape(rng))], lambda a: ad.reciprocal(a)


def _bce(rng):
    s = _shape(rng)
    t = rng.integers(0, 2, size=s)
    return [rng.normal(size=s)], lambda z: ad.bce_with_logits(z, t)


def _permute(rng):
    return [rng.normal(size=_shape(rng, 3))], lambda a: ad.permute_axes(a, (1, 0, 2))


PRIMITIVES = {
    "matmul": _matmul,
    "batched_matmul": _batched_matmul,
    "add": _add,
    "mul": _mul,
    "softmax_rows": _softmax,
    "layer_norm": _layer_norm,
    "concat": _concat,
    "sum": _sum,
    "silu": _nonlinearity,
    "softplus": _softplus,
    "gather_rows": _gather,
    "scatter_add_rows": _scatter,
    "pairwise_sqdist": _sqdist,
    "reciprocal": _reciprocal,
    "bce_with_logits": _bce,
    "permute_axes": _permute,
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(100):
        arrays, op = PRIMITIVES[name](rng)
        points = [Tensor(a) for a in arrays]
        out_shape = op(*points).shape
        w = rng.normal(size=out_shape)
        worst = max(worst, finite_difference_check(lambda ps: ad.sum(ad.mul(op(*ps), w)), points))
    assert worst < 1e-4


def test_backward_traverses_records_in_reverse():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    order = []

    def tracked(t, label):
        return ad.apply_op(t.data.copy(), (t,), lambda g: (order.append(label) or g,), label)

    with Tape() as tape:
        y = ad.sum(tracked(tracked(tracked(x, "a"), "b"), "c"))
    tape.backward(y)
    assert order == ["c", "b", "a"]
    assert [r[0] for r in tape.records][-1] is y


def test_gradient_has_parameter_shape():
    w = Tensor(np.ones((3, 2)), requires_grad=True)
    x = Tensor(np.ones((5, 3)))
    with Tape() as tape:
        y = ad.sum(ad.matmul(x, w))
    tape.backward(y)
    assert w.grad.shape == w.shape
    assert x.grad is None


def test_replay_is_bit_identical():
    rng = np.random.default_rng(9)
    a0, b0 = rng.normal(size=(4, 3)), rng.normal(size=(3, 3))

    def run():
        a = Tensor(a0.copy(), requires_grad=True)
        b = Tensor(b0.copy(), requires_grad=True)
        with Tape() as tape:
            h = ad.softmax_rows(ad.matmul(a, b))
            y = ad.sum(ad.layer_norm(h, b[0], b[1]))
        tape.backward(y)
        return y.data.tobytes(), a.grad.tobytes(), b.grad.tobytes()

    assert run() == run()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_output_raises():
    with pytest.raises(NumericDomainError):
        ad.exp(Tensor(np.array([1e6])))
    with pytest.raises(NumericDomainError):
        ad.reciprocal(Tensor(np.array([0.0])))


def test_no_tape_no_records():
    x = Tensor(np.ones(2), requires_grad=True)
    y = ad.scale(x, 2.0)
    assert y.requires_grad
    with Tape() as tape:
        ad.scale(Tensor(np.ones(2)), 3.0)
    assert len(tape) == 0


def test_unknown_activation():
    with pytest.raises(ValueError, match="unknown activation"):
        ad.activation(Tensor(np.ones(1)), "tanh")
