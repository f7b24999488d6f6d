import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hier2hier import ndgrad as nd
from hier2hier.errors import ContractError, DimensionError, NumericError
from hier2hier.ndgrad import Tape, Tensor, grad_check


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0, scale, size=shape), requires_grad=True)


# -- analytic values --------------------------------------------------------


def test_sigmoid_at_zero():
    assert nd.sigmoid(Tensor(0.0)).item() == 0.5


def test_softmax_of_equal_values_is_uniform():
    y = nd.softmax(Tensor([2.0, 2.0, 2.0])).data
    np.testing.assert_allclose(y, [1 / 3] * 3, atol=1e-15)


def test_masked_mean_ignores_pad():
    x = Tensor([2.0, 4.0, 99.0])
    assert nd.masked_mean(x, [1, 1, 0], axis=0).item() == 3.0


def test_sigmoid_derivative_at_zero():
    x = Tensor(0.0, requires_grad=True)
    with Tape() as tape:
        y = nd.sigmoid(x)
    tape.backward(y)
    assert x.grad == pytest.approx(0.25)


def test_tanh_derivative_at_zero():
    x = Tensor(0.0, requires_grad=True)
    with Tape() as tape:
        y = nd.tanh(x)
    tape.backward(y)
    assert x.grad == pytest.approx(1.0)


# -- error contracts --------------------------------------------------------


def test_matmul_shape_mismatch_names_primitive_and_shapes():
    with pytest.raises(DimensionError, match=r"matmul.*\(2, 3\).*\(4, 5\)"):
        nd.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_add_broadcast_failure_is_dimension_error():
    with pytest.raises(DimensionError, match="add"):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


def test_non_finite_output_raises():
    with pytest.raises(NumericError):
        nd.log(Tensor([0.0]))
    with pytest.raises(NumericError), np.errstate(over="ignore"):
        nd.exp(Tensor([1000.0]))


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        tape.backward(y)


def test_unused_leaf_gets_zero_grad():
    rng = np.random.default_rng(0)
    a, b = leaf(rng, 3), leaf(rng, 3)
    with Tape() as tape:
        loss = (a * a).sum()
        _ = b * 2.0
    tape.backward(loss)
    np.testing.assert_array_equal(b.grad, np.zeros(3))
    np.testing.assert_allclose(a.grad, 2 * a.data)


def test_no_tape_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    y = x * 3.0
    assert not y.requires_grad


# -- gradient correctness per primitive ---------------------------------------


def _check(fn, params, tol=1e-6, h=1e-6):
    report = grad_check(fn, params, h=h, tol=tol)
    assert report.passed, report


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_broadcasting_arithmetic(op):
    rng = np.random.default_rng(1)
    a, b = leaf(rng, 3, 4), leaf(rng, 4)
    if op == "div":
        b.data = np.abs(b.data) + 0.5
    f = {"add": lambda: (a + b), "sub": lambda: (a - b), "mul": lambda: (a * b), "div": lambda: (a / b)}[op]
    _check(lambda: (f() * f()).sum(), [a, b])


@pytest.mark.parametrize("sa,sb", [((3, 4), (4, 2)), ((2, 3, 4), (4, 5)), ((4,), (4, 3)), ((3, 4), (4,)), ((2, 3, 4), (2, 4, 2))])
def test_matmul_gradients(sa, sb):
    rng = np.random.default_rng(2)
    a, b = leaf(rng, *sa), leaf(rng, *sb)
    _check(lambda: nd.tanh(a @ b).sum(), [a, b])


@pytest.mark.parametrize("name", ["sigmoid", "tanh", "exp", "log_sigmoid"])
def test_unary_gradients(name):
    rng = np.random.default_rng(3)
    x = leaf(rng, 5)
    f = getattr(nd, name)
    _check(lambda: (f(x) * Tensor(np.arange(1.0, 6.0))).sum(), [x])


def test_log_gradient():
    x = Tensor(np.array([0.5, 1.5, 3.0]), requires_grad=True)
    _check(lambda: nd.log(x).sum(), [x])


def test_shape_ops_gradients():
    rng = np.random.default_rng(4)
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 2)
    w = Tensor(rng.normal(size=(2, 5)))

    def f():
        c = nd.concat([a, b], axis=-1) * w
        s = nd.stack([c, c * 2.0], axis=1).reshape(2, 10).T
        parts = nd.unstack(s, axis=0)
        return (parts[0] * parts[3] + a[:, 1]).sum() + c.sum(axis=0, keepdims=True).sum()

    _check(f, [a, b])


def test_masked_softmax_gradient_and_zeros():
    rng = np.random.default_rng(5)
    x = leaf(rng, 3, 6)
    mask = np.array([[1, 1, 0, 1, 0, 1], [1, 0, 0, 0, 0, 0], [1, 1, 1, 1, 1, 1]])
    w = Tensor(rng.normal(size=(3, 6)))
    y = nd.masked_softmax(x, mask)
    assert np.all(y.data[mask == 0] == 0)
    np.testing.assert_allclose(y.data.sum(-1), 1, atol=1e-12)
    _check(lambda: (nd.masked_softmax(x, mask) * w).sum(), [x])


def test_masked_mean_gradient():
    rng = np.random.default_rng(6)
    x = leaf(rng, 2, 4, 3)
    mask = np.array([[1, 1, 0, 0], [1, 1, 1, 1]])[..., None]
    _check(lambda: (nd.masked_mean(x, mask, axis=1) * Tensor(np.arange(6.0).reshape(2, 3))).sum(), [x])


def test_embedding_gradient_accumulates_repeated_ids():
    rng = np.random.default_rng(7)
    table = leaf(rng, 5, 3)
    ids = np.array([[0, 2, 2], [4, 0, 2]])
    w = Tensor(rng.normal(size=(2, 3, 3)))
    _check(lambda: (nd.tanh(nd.embedding(table, ids)) * w).sum(), [table])


def test_cross_entropy_and_bce_gradients():
    rng = np.random.default_rng(8)
    logits = leaf(rng, 2, 3, 4)
    targets = np.array([[0, 3, 1], [2, 2, 0]])
    mask = np.array([[1, 1, 0], [1, 0, 0]])
    _check(lambda: nd.cross_entropy(logits, targets, mask).sum(), [logits])
    s = leaf(rng, 4)
    _check(lambda: nd.bce_with_logits(s, [1, 0, 0, 1], [1, 1, 1, 0]).sum(), [s])


def test_cross_entropy_uniform_logits():
    nll = nd.cross_entropy(Tensor(np.zeros((1, 4))), [2])
    assert nll.data[0] == pytest.approx(math.log(4))


def test_lstm_cell_gradient_with_mask():
    rng = np.random.default_rng(9)
    z, c, h = leaf(rng, 3, 8), leaf(rng, 3, 2), leaf(rng, 3, 2)
    mask = np.array([1, 0, 1])
    w1, w2 = Tensor(rng.normal(size=(3, 2))), Tensor(rng.normal(size=(3, 2)))

    def f():
        hn, cn = nd.lstm_cell(z, c, h, mask)
        return (hn * w1).sum() + (cn * w2).sum()

    _check(f, [z, c, h])
    hn, cn = nd.lstm_cell(z, c, h, mask)
    np.testing.assert_array_equal(hn.data[1], h.data[1])
    np.testing.assert_array_equal(cn.data[1], c.data[1])


def test_additive_score_and_weighted_sum_gradients():
    rng = np.random.default_rng(10)
    keys, q, v = leaf(rng, 2, 5, 3), leaf(rng, 2, 3), leaf(rng, 3)
    values = leaf(rng, 2, 5, 4)
    x, w, b = leaf(rng, 2, 4), leaf(rng, 4, 3), leaf(rng, 3)

    def f():
        s = nd.additive_score(keys, q, v)
        out = nd.weighted_sum(nd.softmax(s), values)
        return (nd.linear(out, w, b) * Tensor(rng_fixed)).sum()

    rng_fixed = rng.normal(size=(2, 3))
    _check(f, [keys, q, v, values, w, b])


def test_two_layer_perceptron_matches_finite_differences():
    # random 2-layer perceptron, every parameter, h=1e-4 in float64
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(6, 5)))
    y = np.array([0, 2, 1, 1, 0, 2])
    w1, b1, w2, b2 = leaf(rng, 5, 7), leaf(rng, 7), leaf(rng, 7, 3), leaf(rng, 3)

    def f():
        hid = nd.tanh(nd.linear(x, w1, b1))
        return nd.cross_entropy(nd.linear(hid, w2, b2), y).sum()

    report = grad_check(f, {"w1": w1, "b1": b1, "w2": w2, "b2": b2}, h=1e-4, tol=1e-4)
    assert report.passed, report


def test_grad_check_polynomial_and_degenerate():
    x = Tensor(3.0, requires_grad=True)
    report = grad_check(lambda: x * x, [x], h=1e-4, tol=1e-4)
    assert report.passed and report.max_rel_err < 1e-6
    empty = grad_check(lambda: Tensor(1.0), {})
    assert empty.passed and empty.worst_parameter is None and empty.checked == 0


def test_grad_check_rejects_nondeterminism():
    x = Tensor(np.ones(2), requires_grad=True)
    rng = np.random.default_rng(0)
    with pytest.raises(ContractError):
        grad_check(lambda: (x * Tensor(rng.normal(size=2))).sum(), [x])


# -- properties -------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(2, 7), st.integers(0, 2**31 - 1))
def test_softmax_is_distribution_over_unmasked(rows, cols, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(0, 5, size=(rows, cols)))
    mask = rng.random((rows, cols)) < 0.6
    mask[:, 0] = True
    y = nd.masked_softmax(x, mask).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(-1), 1, atol=1e-6)
    assert np.all(y[~mask] == 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_backward_is_linear_in_the_loss(seed):
    rng = np.random.default_rng(seed)
    w = leaf(rng, 4, 3)
    x = Tensor(rng.normal(size=(2, 4)))

    def loss_a():
        return nd.tanh(x @ w).sum()

    def loss_b():
        return (nd.sigmoid(x @ w) * nd.sigmoid(x @ w)).sum()

    grads = []
    for fn in (loss_a, loss_b, lambda: loss_a() + loss_b()):
        with Tape() as tape:
            loss = fn()
        tape.backward(loss)
        grads.append(w.grad.copy())
    np.testing.assert_allclose(grads[0] + grads[1], grads[2], rtol=1e-12, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.9))
def test_dropout_eval_is_identity(seed, rate):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(3, 4)))
    assert nd.dropout(x, rate, rng, train=False) is x


def test_dropout_train_scales_kept_units():
    x = Tensor(np.ones((200, 50)))
    y = nd.dropout(x, 0.2, np.random.default_rng(0), train=True).data
    assert set(np.unique(y)) <= {0.0, 1.25}
    assert abs(y.mean() - 1.0) < 0.05


def test_dropout_same_seed_same_mask():
    x = Tensor(np.ones((4, 4)))
    a = nd.dropout(x, 0.5, np.random.default_rng(3), train=True).data
    b = nd.dropout(x, 0.5, np.random.default_rng(3), train=True).data
    np.testing.assert_array_equal(a, b)


def test_tape_is_topologically_ordered_and_replays_exactly():
    rng = np.random.default_rng(12)
    w = leaf(rng, 3, 3)
    with Tape() as tape:
        h = nd.tanh(Tensor(rng.normal(size=(2, 3))) @ w)
        hn, cn = nd.lstm_cell(nd.concat([h, h, h, h], axis=-1), h, h, np.array([1, 0]))
        loss = nd.dropout(hn + cn, 0.3, rng, train=True).sum()
    produced = {}
    for i, rec in enumerate(tape.records):
        for t in rec.inputs:
            if id(t) in produced:
                assert produced[id(t)] < i
        for t in rec.outputs:
            produced[id(t)] = i
    replayed = tape.replay()
    for rec, outs in zip(tape.records, replayed):
        for t, o in zip(rec.outputs, outs):
            np.testing.assert_array_equal(t.data, o)
    tape.backward(loss)
    assert w.grad.shape == w.shape
