import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from simbalab import autodiff as ad
from simbalab.autodiff import Tape, Tensor, backward, grad_check


def test_add_example():
    np.testing.assert_array_equal(ad.add([1.0, 2.0], [3.0, 4.0]).data, [4.0, 6.0])


def test_relu_example():
    np.testing.assert_array_equal(ad.relu([-1.0, 0.0, 2.0]).data, [0.0, 0.0, 2.0])


def test_matmul_example():
    out = ad.matmul(np.ones((2, 3)), np.ones((3, 1)))
    np.testing.assert_array_equal(out.data, [[3.0], [3.0]])


def test_grad_of_sum_is_ones():
    tape = Tape()
    x = tape.variable(np.arange(6.0).reshape(2, 3))
    g = backward(tape, ad.sum(x))[x]
    np.testing.assert_array_equal(g, np.ones((2, 3)))


def test_grad_of_sum_square():
    tape = Tape()
    x = tape.variable([1.0, 2.0])
    np.testing.assert_array_equal(backward(tape, ad.sum(ad.square(x)))[x], [2.0, 4.0])


def test_relu_kink_convention():
    tape = Tape()
    x = tape.variable([-1.0, 3.0, 0.0])
    np.testing.assert_array_equal(backward(tape, ad.sum(ad.relu(x)))[x], [0.0, 1.0, 0.0])


def test_grad_check_examples():
    assert grad_check(lambda x: ad.sum(ad.square(x)), [1.0, 2.0]) < 1e-8
    assert grad_check(lambda x: ad.sum(ad.tanh(x)), np.zeros(4)) < 1e-8


def test_non_scalar_loss_rejected():
    tape = Tape()
    x = tape.variable([1.0, 2.0])
    with pytest.raises(ad.ShapeError):
        backward(tape, ad.square(x))


def test_unused_leaf_gets_exact_zero():
    tape = Tape()
    x = tape.variable([1.0, 2.0])
    y = tape.variable([[3.0]])
    g = backward(tape, ad.sum(ad.square(x)))
    assert g[y].shape == (1, 1)
    assert np.all(g[y] == 0.0)


def test_shape_errors_name_primitive():
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(np.ones(2), np.ones(3))
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ad.ShapeError, match="concat"):
        ad.concat([np.ones((2, 3)), np.ones((3, 3))], axis=1)


def test_domain_errors():
    with pytest.raises(ad.DomainError):
        ad.log([1.0, 0.0])
    with pytest.raises(ad.DomainError):
        ad.sqrt([-1.0])


def test_unknown_primitive():
    with pytest.raises(ValueError):
        ad.apply_primitive("softmax", ([1.0],))


def test_tensor_is_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_constants_leave_no_trace():
    tape = Tape()
    x = tape.variable([1.0])
    c = ad.add(Tensor([1.0]), Tensor([2.0]))
    assert c.node_id is None
    ad.add(x, c)
    assert len(tape) == 2


def test_tape_nodes_topological():
    tape = Tape()
    x = tape.variable(np.ones((2, 2)))
    ad.sum(ad.relu(ad.matmul(x, x)))
    for i, node in enumerate(tape.nodes):
        assert all(j < i for j in node.inputs if j is not None)


# Per-primitive checks against central differences.

def _smooth(shape, seed=0, positive=False):
    r = np.random.default_rng(seed).standard_normal(shape)
    return np.abs(r) + 0.5 if positive else r


W = np.random.default_rng(7).standard_normal((3, 4))
V = np.random.default_rng(8).standard_normal((2, 3))
UNARY_CASES = {
    "matmul_left": (lambda x: ad.sum(ad.square(ad.matmul(x, W))), (2, 3), False),
    "matmul_right": (lambda x: ad.sum(ad.square(ad.matmul(V, x))), (3, 4), False),
    "matvec": (lambda x: ad.sum(ad.square(ad.matmul(W.T, x))), (3,), False),
    "add": (lambda x: ad.sum(ad.square(ad.add(x, x))), (5,), False),
    "sub": (lambda x: ad.sum(ad.square(ad.sub(Tensor(np.arange(5.0)), x))), (5,), False),
    "mul": (lambda x: ad.sum(ad.mul(x, ad.tanh(x))), (5,), False),
    "scalar_mul": (lambda x: ad.sum(ad.square(ad.scalar_mul(x, -2.5))), (5,), False),
    "relu": (lambda x: ad.sum(ad.square(ad.relu(x))), (6,), False),
    "tanh": (lambda x: ad.sum(ad.tanh(x)), (6,), False),
    "exp": (lambda x: ad.sum(ad.exp(x)), (6,), False),
    "log": (lambda x: ad.sum(ad.log(x)), (6,), True),
    "square": (lambda x: ad.sum(ad.square(x)), (6,), False),
    "sqrt": (lambda x: ad.sum(ad.sqrt(x)), (6,), True),
    "sum_axis": (lambda x: ad.sum(ad.square(ad.sum(x, axis=0))), (3, 4), False),
    "mean_keepdims": (lambda x: ad.sum(ad.square(ad.mean(x, axis=1, keepdims=True))),
                      (3, 4), False),
    "concat": (lambda x: ad.sum(ad.square(ad.concat([x, ad.tanh(x)], axis=1))), (2, 3), False),
    "broadcast": (lambda x: ad.sum(ad.mul(ad.broadcast(x, (4, 3)), Tensor(np.arange(12.0)
                                                                          .reshape(4, 3)))),
                  (3,), False),
    "slice": (lambda x: ad.sum(ad.square(ad.slice_(x, (slice(None), slice(1, 3))))),
              (2, 4), False),
    "fancy_slice": (lambda x: ad.sum(ad.square(ad.slice_(x, ([0, 0, 1],)))), (3,), False),
}


@pytest.mark.parametrize("name", sorted(UNARY_CASES))
def test_primitive_gradients(name):
    f, shape, positive = UNARY_CASES[name]
    x = _smooth(shape, seed=len(name), positive=positive)
    if name == "relu":
        x = np.where(np.abs(x) < 1e-3, 0.5, x)
    assert grad_check(f, x) < 1e-6


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-3, 3)))
def test_tanh_square_chain_matches_fd(x):
    assert grad_check(lambda t: ad.sum(ad.square(ad.tanh(t))), x) < 1e-6


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-5, 5)))
def test_sum_gradient_is_ones_property(x):
    tape = Tape()
    v = tape.variable(x)
    np.testing.assert_array_equal(backward(tape, ad.sum(v))[v], np.ones_like(x))


def test_composites():
    np.testing.assert_allclose(ad.clamp([-20.0, 0.5, 7.0], -10.0, 2.0).data, [-10.0, 0.5, 2.0])
    np.testing.assert_allclose(ad.minimum([1.0, 5.0], [3.0, 2.0]).data, [1.0, 2.0])
    np.testing.assert_allclose(ad.rsqrt([4.0, 0.25]).data, [0.5, 2.0])
    assert grad_check(lambda x: ad.sum(ad.rsqrt(x)), [0.7, 2.0]) < 1e-6
    assert grad_check(lambda x: ad.sum(ad.minimum(x, Tensor([0.0, 0.0]))), [0.3, -0.4]) < 1e-8


def test_replay_is_bitwise_identical():
    def run():
        tape = Tape()
        rng = np.random.default_rng(3)
        w = tape.variable(rng.standard_normal((4, 5)))
        x = rng.standard_normal((6, 4))
        loss = ad.mean(ad.square(ad.relu(ad.matmul(x, w))))
        return loss.data.copy(), backward(tape, loss)[w]

    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes()
    assert g1.tobytes() == g2.tobytes()


def test_distinct_tapes_on_threads():
    results = {}

    def work(i):
        tape = Tape()
        x = tape.variable(np.full(3, float(i)))
        results[i] = backward(tape, ad.sum(ad.square(x)))[x]

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for i in range(4):
        np.testing.assert_array_equal(results[i], np.full(3, 2.0 * i))


def test_precision_context():
    with ad.precision(np.float32):
        t = Tensor([1.0])
        assert t.data.dtype == np.float32
    assert Tensor([1.0]).data.dtype == np.float64
