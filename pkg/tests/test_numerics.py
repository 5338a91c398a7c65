import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqgnn import autodiff as ad
from eqgnn.gradcheck import check_gradients
from eqgnn.graph_data import normalize_adjacency
from eqgnn.optim import ParamCollection, adam_step, glorot, load_checkpoint, save_checkpoint


def test_relu_sigmoid_values():
    assert ad.relu(ad.const([[-1.0, 0.0, 2.0]])).value.tolist() == [[0.0, 0.0, 2.0]]
    assert ad.sigmoid(ad.const([[0.0]])).value[0, 0] == 0.5


def test_sigmoid_is_stable_at_extremes():
    out = ad.sigmoid(ad.const([[-1000.0, 1000.0]])).value
    assert np.all(np.isfinite(out))
    assert out[0, 0] == pytest.approx(0.0) and out[0, 1] == pytest.approx(1.0)


def test_sparse_matmul_identity():
    x = np.arange(6.0).reshape(3, 2)
    eye = normalize_adjacency(np.zeros((0, 2), dtype=int), 3)
    assert np.array_equal(ad.sparse_matmul(eye, ad.const(x)).value, x)


def test_softmax_rows_sum_to_one():
    p = ad.softmax_rows(ad.const(np.random.default_rng(0).normal(size=(5, 4)) * 50)).value
    assert np.allclose(p.sum(axis=1), 1.0)


def test_bce_examples():
    half = ad.loss_bce(ad.const([[0.5], [0.5]]), np.array([[1.0], [0.0]]))
    assert half.value == pytest.approx(math.log(2))
    exact = ad.loss_bce(ad.const([[1.0], [0.0]]), np.array([[1.0], [0.0]]))
    assert exact.value <= 1e-6
    v = ad.loss_bce(ad.const([[0.9], [0.1]]), np.array([[1.0], [0.0]]))
    assert v.value == pytest.approx(-math.log(0.9), abs=1e-5)
    assert v.value == pytest.approx(0.10536, abs=1e-5)


def test_cce_examples():
    assert ad.loss_cce(ad.const(np.zeros((4, 3))), np.array([0, 1, 2, 0])).value == pytest.approx(math.log(3))
    assert ad.loss_cce(ad.const([[1e4, 0.0]]), np.array([0])).value == pytest.approx(0.0, abs=1e-12)
    v = ad.loss_cce(ad.const([[1.0, 0.0]]), np.array([0])).value
    assert v == pytest.approx(-math.log(1 / (1 + math.exp(-1))))
    assert v == pytest.approx(0.31326, abs=1e-5)


def test_cce_rejects_bad_target():
    with pytest.raises(ValueError):
        ad.loss_cce(ad.const([[1.0, 0.0]]), np.array([2]))


def test_shape_mismatch_is_reported():
    with pytest.raises(ValueError):
        ad.matmul(ad.const(np.ones((2, 3))), ad.const(np.ones((2, 3))))


def test_backward_constant_and_sum():
    w = ad.param(np.ones((2, 3)))
    loss = ad.sum_all(ad.mul(ad.const(np.zeros((2, 3))), w))
    ad.backward(loss)
    assert np.array_equal(w.grad, np.zeros((2, 3)))
    w2 = ad.param(np.random.default_rng(1).normal(size=(3, 2)))
    ad.backward(ad.sum_all(w2))
    assert np.array_equal(w2.grad, np.ones((3, 2)))


def test_backward_accumulates_shared_use():
    w = ad.param(np.array([[2.0]]))
    ad.backward(ad.sum_all(ad.mul(w, w)))  # d(w²)/dw = 2w
    assert w.grad[0, 0] == pytest.approx(4.0)


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        ad.backward(ad.param(np.ones((2, 2))))


def test_bce_gradient_is_zero_inside_clamp():
    p = ad.param(np.array([[0.0], [1.0]]))
    ad.backward(ad.loss_bce(p, np.array([[0.0], [1.0]])))
    assert np.array_equal(p.grad, np.zeros((2, 1)))


def _adam_once(g, lr=1e-3, wd=0.0):
    pc = ParamCollection()
    w = pc.add("w", np.full_like(g, 0.7))
    w.grad = g.copy()
    adam_step(pc, lr=lr, weight_decay=wd)
    return pc, w.value - 0.7


def test_adam_first_step_is_signed_lr():
    g = np.array([[3.0, -0.02, 500.0]])
    _, delta = _adam_once(g)
    assert np.allclose(delta, -1e-3 * np.sign(g), rtol=1e-5)


def test_adam_zero_gradient_and_zero_lr():
    _, delta = _adam_once(np.zeros((2, 2)))
    assert np.array_equal(delta, np.zeros((2, 2)))
    pc, delta = _adam_once(np.array([[1.0, -2.0]]), lr=0.0)
    assert np.array_equal(delta, np.zeros((1, 2)))
    assert np.allclose(pc.m["w"], 0.1 * np.array([[1.0, -2.0]]))
    assert pc.step == 1


def test_adam_weight_decay_adds_to_gradient():
    pc = ParamCollection()
    w = pc.add("w", np.array([[2.0]]))
    w.grad = np.zeros((1, 1))
    adam_step(pc, lr=1e-3, weight_decay=0.5)
    assert pc.m["w"][0, 0] == pytest.approx(0.1 * 0.5 * 2.0)


def test_glorot_bounds():
    w = glorot(np.random.default_rng(0), 30, 70)
    bound = math.sqrt(6 / 100)
    assert w.shape == (30, 70) and np.abs(w).max() <= bound


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"W": np.arange(6.0).reshape(2, 3), "b": np.array([[1.5]])}
    path = tmp_path / "c.npz"
    save_checkpoint(str(path), arrays, {"seed": 4, "note": "x"})
    back, meta = load_checkpoint(str(path))
    assert meta == {"seed": 4, "note": "x"}
    assert all(np.array_equal(back[k], arrays[k]) for k in arrays)
    assert [p.name for p in tmp_path.iterdir()] == ["c.npz"]


def test_gradcheck_linear_model_is_exact():
    rng = np.random.default_rng(0)
    pc = ParamCollection()
    w = pc.add("w", rng.normal(size=(3, 2)))
    x = rng.normal(size=(5, 3))
    rep = check_gradients(lambda: ad.sum_all(ad.matmul(x, w)), pc)
    assert rep.worst < 1e-8 and rep.ok


def test_gradcheck_flags_corrupted_gradient():
    rng = np.random.default_rng(1)
    pc = ParamCollection()
    a = pc.add("a", rng.normal(size=(2, 2)))
    b = pc.add("b", rng.normal(size=(2, 1)))
    fn = lambda: ad.sum_all(ad.square(ad.matmul(a, b)))  # noqa: E731
    ad.backward(fn())
    bad = {"a": a.grad.copy(), "b": b.grad.copy() * 1.5}
    rep = check_gradients(fn, pc, analytic=bad)
    assert rep.failing == ["b"]


def test_gradcheck_two_layer_graph_classifier(toy_graph):
    from eqgnn.classifier import ClassifierShape, classifier_forward, init_classifier, task_loss
    rng = np.random.default_rng(2)
    adj = normalize_adjacency(np.array([[0, 1], [1, 2], [2, 3], [3, 4], [0, 4]]), 5)
    params = init_classifier(ClassifierShape(3, 2, 4, 4), rng)
    x = rng.normal(size=(5, 3))
    y = np.array([0, 1, 1, 0, 1])
    rep = check_gradients(lambda: task_loss(classifier_forward(params, x, adj)[0], y, np.arange(5)), params)
    assert rep.ok, rep.lines()


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_sigmoid_composition_gradients(n, d, seed):
    rng = np.random.default_rng(seed)
    pc = ParamCollection()
    w = pc.add("w", rng.normal(size=(d, 1)))
    x = rng.normal(size=(n, d))
    t = rng.integers(0, 2, size=(n, 1)).astype(float)
    rep = check_gradients(lambda: ad.loss_bce(ad.sigmoid(ad.matmul(x, w)), t), pc)
    assert rep.ok
