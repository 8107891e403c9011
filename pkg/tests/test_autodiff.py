import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from morphtag.autodiff import (Adam, AdamState, Graph, GraphError, NumericError, ShapeError,
                               adam_step, dropout_mask, gradient_check, numeric_gradient,
                               parameter)
from morphtag.layers import LstmParams, lstm_cell_step, run_lstm

TOL = 1e-4


def rand(rng, *shape):
    return rng.normal(size=shape)


def check(build, shapes, seed=0):
    rng = np.random.default_rng(seed)
    params = [parameter(rand(rng, *s), f"p{i}") for i, s in enumerate(shapes)]
    g = Graph()
    loss = build(g, *params)
    errs = gradient_check(g, loss, params)
    assert max(errs.values()) < TOL, errs


def test_elementwise_grads():
    check(lambda g, a, b: g.sum(g.mul(g.add(a, b), g.sub(a, b))), [(3, 4), (3, 4)])
    check(lambda g, a: g.sum(g.tanh(a)), [(5,)])
    check(lambda g, a: g.sum(g.sigmoid(a)), [(2, 3)])
    check(lambda g, a: g.sum(g.square(g.scale(a, 0.3))), [(4,)])


def test_broadcast_add_grad():
    check(lambda g, a, b: g.sum(g.tanh(g.add(a, b))), [(2, 3, 4), (4,)])


def test_matmul_batched_grad():
    check(lambda g, a, b: g.sum(g.tanh(g.matmul(a, b))), [(2, 3, 4), (4, 5)])


def test_structural_grads():
    check(lambda g, a, b: g.sum(g.tanh(g.concat([a, b], axis=-1))), [(2, 3), (2, 2)])
    check(lambda g, a: g.sum(g.square(g.slice(a, 1, 3))), [(2, 4)])
    check(lambda g, a: g.sum(g.square(g.take(a, 1, axis=1))), [(2, 3, 2)])
    check(lambda g, a, b: g.sum(g.tanh(g.stack([a, b], axis=1))), [(2, 3), (2, 3)])
    check(lambda g, a: g.sum(g.square(g.reshape(a, (3, 2)))), [(2, 3)])
    check(lambda g, a: g.sum(g.square(g.sum(a, axis=1))), [(2, 3, 2)])


def test_take_along_and_gather_grads():
    idx = np.array([[2, 1, 0], [0, 1, 2]])
    check(lambda g, a: g.sum(g.square(g.take_along(a, idx, axis=1))), [(2, 3, 2)])
    ids = np.array([[1, 3, 1], [0, 2, 3]])
    check(lambda g, t: g.sum(g.tanh(g.gather(t, ids))), [(4, 3)])


def test_gather_frozen_row_gets_no_grad():
    t = parameter(np.ones((3, 2)))
    g = Graph()
    g.backward(g.sum(g.gather(t, np.array([0, 1, 1]), frozen_id=0)))
    assert np.all(t.grad[0] == 0) and np.all(t.grad[1] == 2)


def test_softmax_and_cross_entropy_grads():
    check(lambda g, a: g.sum(g.square(g.softmax(a))), [(3, 5)])
    targets = np.array([[1, 0, 2], [2, 2, 0]])
    w = np.array([[1, 1, 0], [1, 0, 1]], dtype=float)
    check(lambda g, a: g.cross_entropy(a, targets, w), [(2, 3, 4)])


def test_dropout_grad():
    mask = dropout_mask((3, 4), 0.7, 0)
    check(lambda g, a: g.sum(g.square(g.dropout(a, mask))), [(3, 4)])


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_grl_grad_is_flipped_finite_difference(lam):
    # finite differences see the identity; the analytic gradient carries -lam
    x = parameter(np.random.default_rng(1).normal(size=3), "x")
    g = Graph()
    loss = g.sum(g.tanh(g.grl(x, lam)))
    (analytic,) = g.backward(loss, [x])
    numeric = numeric_gradient(lambda: float(g.evaluate()[loss]), x.value)
    np.testing.assert_allclose(analytic, -lam * numeric, rtol=1e-8, atol=1e-12)


def test_lstm_scan_grads_and_equivalence():
    rng = np.random.default_rng(3)
    layer = LstmParams(3, 4, rng)
    for p in (layer.p_i, layer.p_f, layer.p_o):
        p.value = rng.normal(size=p.value.shape) * 0.5
    x = parameter(rand(rng, 2, 5, 3), "x")
    g = Graph()
    fused = run_lstm(g, layer, x)
    g2 = Graph()
    chained = run_lstm(g2, layer, x, fused=False)
    np.testing.assert_array_equal(fused.value, chained.value)
    loss = g.sum(g.square(fused))
    errs = gradient_check(g, loss, [x] + layer.parameters())
    assert max(errs.values()) < TOL, errs


def test_lstm_zero_params_give_zero_state():
    layer = LstmParams(3, 2, np.random.default_rng(0))
    for p in layer.parameters():
        p.value = np.zeros_like(p.value)
    g = Graph()
    h, c = lstm_cell_step(g, layer, g.constant(np.ones((1, 3))), g.constant(np.zeros((1, 2))),
                          g.constant(np.zeros((1, 2))))
    assert np.all(h.value == 0) and np.all(c.value == 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_rows_sum_to_one(xs):
    g = Graph()
    p = g.softmax(g.constant(np.array([xs, xs[::-1]])))
    np.testing.assert_allclose(p.value.sum(axis=-1), 1.0, atol=1e-12)


@pytest.mark.parametrize("k", [2, 3, 7, 50])
def test_uniform_cross_entropy_is_log_k(k):
    g = Graph()
    ce = g.cross_entropy(g.constant(np.zeros((4, k))), np.arange(4) % k)
    assert abs(float(ce.value) - np.log(k)) < 1e-12


def test_grl_examples():
    x = parameter(np.array([0.3, -1.2]))
    g = Graph()
    y = g.grl(x, 1.0)
    assert np.array_equal(y.value, x.value)
    g.backward(g.sum(g.mul(y, np.array([1.0, -2.0]))))
    np.testing.assert_array_equal(x.grad, [-1.0, 2.0])
    x = parameter(np.array([5.0]))
    g = Graph()
    g.backward(g.sum(g.mul(g.grl(x, 0.0), np.array([4.0]))))
    assert x.grad[0] == 0.0
    with pytest.raises(ValueError):
        Graph().grl(x, -0.1)


def test_shape_errors_name_the_node():
    g = Graph()
    with pytest.raises(ShapeError, match="matmul"):
        g.matmul(g.constant(np.ones((2, 3))), g.constant(np.ones((4, 2))))


def test_nonfinite_detection():
    g = Graph(check_finite=True)
    with pytest.raises(NumericError):
        g.mul(g.constant(np.array([np.inf])), g.constant(np.array([0.0])))


def test_backward_needs_scalar_loss():
    g = Graph()
    y = g.tanh(parameter(np.ones(3)))
    with pytest.raises(GraphError):
        g.backward(y)


def test_evaluate_rebinding():
    g = Graph()
    x = g.input(np.array([1.0, 2.0]))
    y = g.sum(g.square(x))
    assert float(y.value) == 5.0
    g.evaluate({x: np.array([3.0, 0.0])})
    assert float(y.value) == 9.0


def test_grad_accumulates_over_reuse():
    x = parameter(np.array([2.0]))
    g = Graph()
    g.backward(g.sum(g.add(g.mul(x, x), x)))
    assert x.grad[0] == pytest.approx(5.0)


def test_dropout_mask_is_inverted():
    m = dropout_mask((20000,), 0.7, 1)
    assert set(np.unique(m)) <= {0.0, 1 / 0.7}
    assert abs(m.mean() - 1.0) < 0.03
    assert np.all(dropout_mask((3,), 1.0, 0) == 1.0)


def test_adam_matches_textbook():
    rng = np.random.default_rng(0)
    p = rng.normal(size=4)
    ref = p.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    state = AdamState.for_params([p], lr=0.01)
    for t in range(1, 6):
        g = rng.normal(size=4)
        adam_step([p], [g], state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p, ref, rtol=1e-12)


def test_adam_skips_params_without_grad():
    a, b = parameter(np.ones(2)), parameter(np.ones(2))
    opt = Adam([a, b], lr=0.1)
    a.grad = np.ones(2)
    opt.step()
    assert np.all(a.value < 1) and np.all(b.value == 1)
