"""Forward semantics and autodiff checks for the tensor core."""

import numpy as np
import pytest

from fedgtea import numkit as nk
from fedgtea.errors import NumericError, ShapeError

from helpers import check_gradients, conv2d_reference, tconv2d_reference


# -- forward examples --------------------------------------------------------


def test_add_elementwise():
    out = nk.add(nk.constant([1.0, 2.0]), nk.constant([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_softmax_symmetry():
    out = nk.softmax(nk.constant([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5], rtol=0, atol=0)


def test_matmul_identity():
    m = nk.constant([[5.0, 6.0], [7.0, 8.0]])
    out = nk.matmul(nk.constant(np.eye(2)), m)
    np.testing.assert_array_equal(out.data, m.data)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        nk.matmul(nk.constant(np.ones((2, 3))), nk.constant(np.ones((2, 3))))


def test_nonfinite_forward_raises():
    with pytest.raises(NumericError):
        nk.log(nk.constant([0.0]))


def test_softmax_normalized_property():
    rng = np.random.default_rng(7)
    for _ in range(50):
        x = rng.standard_normal((4, 9)) * rng.uniform(0.1, 30)
        y = nk.softmax(nk.constant(x), axis=-1).data
        assert (y >= 0).all()
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


def test_conv2d_matches_naive_reference():
    rng = np.random.default_rng(3)
    for stride, pad in [(1, 0), (1, 1), (2, 1), (2, 0)]:
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        got = nk.conv2d(nk.constant(x), nk.constant(w), stride=stride, padding=pad)
        np.testing.assert_allclose(got.data, conv2d_reference(x, w, stride, pad),
                                   atol=1e-12)


def test_transposed_conv2d_matches_naive_reference():
    rng = np.random.default_rng(4)
    for stride, pad, k in [(1, 0, 3), (2, 1, 4), (2, 1, 3), (1, 1, 3)]:
        x = rng.standard_normal((2, 3, 4, 4))
        w = rng.standard_normal((3, 5, k, k))
        got = nk.transposed_conv2d(nk.constant(x), nk.constant(w),
                                   stride=stride, padding=pad)
        np.testing.assert_allclose(got.data, tconv2d_reference(x, w, stride, pad),
                                   atol=1e-12)


# -- backward ----------------------------------------------------------------


def test_backward_sum_of_squares():
    x = nk.parameter([1.0, 2.0, 3.0])
    with nk.record() as tape:
        loss = nk.sum(nk.mul(x, x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_sigmoid_at_zero():
    w = nk.parameter([0.0])
    x = nk.constant([1.0])
    with nk.record() as tape:
        loss = nk.sum(nk.sigmoid(nk.mul(w, x)))
    tape.backward(loss)
    np.testing.assert_allclose(w.grad, [0.25])


def test_backward_requires_scalar():
    x = nk.parameter([1.0, 2.0])
    with nk.record() as tape:
        y = nk.mul(x, x)
    with pytest.raises(ShapeError):
        tape.backward(y)


def test_backward_fanout_accumulates():
    x = nk.parameter([3.0])
    with nk.record() as tape:
        y = nk.add(nk.mul(x, x), x)  # x^2 + x -> 2x + 1 = 7
    tape.backward(y)
    np.testing.assert_allclose(x.grad, [7.0])


def test_detach_blocks_gradient():
    x = nk.parameter([2.0])
    with nk.record() as tape:
        y = nk.sum(nk.mul(x.detach(), x))  # only the second factor is live
    tape.backward(y)
    np.testing.assert_allclose(x.grad, [2.0])


def test_pause_stops_recording():
    x = nk.parameter([2.0])
    with nk.record() as tape:
        with nk.pause():
            frozen = nk.mul(x, x)
        loss = nk.sum(nk.mul(frozen, x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [4.0])


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((5, 6))
    w1 = rng.standard_normal((6, 8)) * 0.5
    b1 = rng.standard_normal(8) * 0.1
    w2 = rng.standard_normal((8, 4)) * 0.5
    b2 = rng.standard_normal(4) * 0.1
    w3 = rng.standard_normal((4, 1)) * 0.5

    def loss_fn(xt, w1t, b1t, w2t, b2t, w3t):
        h1 = nk.tanh(nk.add(nk.matmul(xt, w1t), b1t))
        h2 = nk.leaky_relu(nk.add(nk.matmul(h1, w2t), b2t), alpha=0.1)
        return nk.mean(nk.mul(nk.matmul(h2, w3t), nk.matmul(h2, w3t)))

    check_gradients(loss_fn, [x, w1, b1, w2, b2, w3], seed=1)


@pytest.mark.parametrize("name,build", [
    ("add", lambda a, b: nk.sum(nk.add(a, b))),
    ("sub", lambda a, b: nk.sum(nk.mul(nk.sub(a, b), nk.sub(a, b)))),
    ("mul", lambda a, b: nk.sum(nk.mul(a, b))),
    ("div", lambda a, b: nk.sum(nk.div(a, b))),
    ("matmul", lambda a, b: nk.sum(nk.matmul(a, b))),
])
def test_binary_op_gradients(name, build):
    rng = np.random.default_rng(5)
    a = rng.standard_normal((4, 4))
    b = rng.standard_normal((4, 4)) + 3.0  # keep div well conditioned
    check_gradients(build, [a, b], seed=2)


@pytest.mark.parametrize("name,build", [
    ("neg", lambda a: nk.sum(nk.mul(nk.neg(a), nk.neg(a)))),
    ("relu", lambda a: nk.sum(nk.relu(a))),
    ("leaky_relu", lambda a: nk.sum(nk.leaky_relu(a))),
    ("tanh", lambda a: nk.sum(nk.tanh(a))),
    ("sigmoid", lambda a: nk.sum(nk.sigmoid(a))),
    ("softplus", lambda a: nk.sum(nk.softplus(a))),
    ("softmax", lambda a: nk.sum(nk.mul(nk.softmax(a, axis=-1),
                                        nk.softmax(a, axis=-1)))),
    ("log_softmax", lambda a: nk.mean(nk.log_softmax(a, axis=-1))),
    ("exp", lambda a: nk.sum(nk.exp(a))),
    ("mean", lambda a: nk.mean(nk.mul(a, a))),
    ("reshape", lambda a: nk.sum(nk.mul(nk.reshape(a, (8, 2)), 2.0))),
])
def test_unary_op_gradients(name, build):
    rng = np.random.default_rng(6)
    a = rng.standard_normal((4, 4))
    a = a + 0.15 * np.sign(a)  # keep clear of relu kinks for finite differences
    check_gradients(build, [a], seed=3)


def test_log_sqrt_gradients_on_positive_inputs():
    rng = np.random.default_rng(8)
    a = rng.uniform(0.5, 3.0, size=(5, 3))
    check_gradients(lambda t: nk.sum(nk.log(t)), [a], seed=4)
    check_gradients(lambda t: nk.sum(nk.sqrt(t)), [a], seed=5)


def test_concat_broadcast_gradients():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((3, 2))
    b = rng.standard_normal((3, 4))

    def build(at, bt):
        joined = nk.concat([at, bt], axis=1)
        wide = nk.broadcast_to(nk.reshape(nk.mean(joined, axis=0), (1, 6)), (3, 6))
        return nk.sum(nk.mul(joined, wide))

    check_gradients(build, [a, b], seed=6)


def test_conv_gradients():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((2, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))

    def build(xt, wt):
        return nk.sum(nk.mul(nk.conv2d(xt, wt, stride=2, padding=1),
                             nk.conv2d(xt, wt, stride=2, padding=1)))

    check_gradients(build, [x, w], seed=7)


def test_transposed_conv_gradients():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((2, 3, 4, 4))
    w = rng.standard_normal((3, 2, 4, 4))

    def build(xt, wt):
        y = nk.transposed_conv2d(xt, wt, stride=2, padding=1)
        return nk.mean(nk.mul(y, y))

    check_gradients(build, [x, w], seed=8)


def test_tape_determinism():
    def run():
        rng = np.random.default_rng(123)
        x = nk.parameter(rng.standard_normal((4, 3)))
        w = nk.parameter(rng.standard_normal((3, 2)))
        with nk.record() as tape:
            loss = nk.mean(nk.mul(nk.tanh(nk.matmul(x, w)),
                                  nk.tanh(nk.matmul(x, w))))
        tape.backward(loss)
        return loss.item(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert l1 == l2
    np.testing.assert_array_equal(gx1, gx2)
    np.testing.assert_array_equal(gw1, gw2)
