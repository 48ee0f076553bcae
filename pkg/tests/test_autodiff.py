import numpy as np
import pytest

from core import autodiff as ad
from core.autodiff import Node
from core.errors import NonScalarLoss, ShapeMismatch
from core.layers import Adam, Graph, LayerParams, Linear, clip_grad_norm, global_norm

LAYER_TOL = 1e-4


def _check(loss_fn, params, **kwargs):
    return ad.gradient_check(loss_fn, params, **kwargs)


def test_elementwise_chain(rng):
    target = rng.standard_normal((3, 4))

    def loss(p):
        a, b = p["a"], p["b"]
        return ad.mse(ad.exp(a * 0.3) * b - ad.square(b) + a, target)

    err = _check(loss, {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((1, 4))})
    assert err <= LAYER_TOL


def test_sigmoid_and_leaky_relu(rng):
    def loss(p):
        return ad.sum(ad.sigmoid(ad.leaky_relu(p["x"], 0.1)) * 2.0)

    x = rng.standard_normal(20)
    x[np.abs(x) < 1e-2] = 0.5
    assert _check(loss, {"x": x}) <= LAYER_TOL


def test_linear_layer_norm(rng):
    def loss(p):
        h = ad.linear(p["x"], p["w"], p["b"])
        return ad.mean(ad.square(ad.layer_norm(h, p["g"], p["beta"])) * np.arange(5.0))

    params = {
        "x": rng.standard_normal((4, 6)),
        "w": rng.standard_normal((5, 6)),
        "b": rng.standard_normal(5),
        "g": rng.standard_normal(5),
        "beta": rng.standard_normal(5),
    }
    assert _check(loss, params) <= LAYER_TOL


def test_concat_take_reshape(rng):
    def loss(p):
        joined = ad.concat([p["a"][:2], p["b"]], axis=1)
        return ad.sum(ad.square(ad.reshape(joined, (-1,))))

    assert _check(loss, {"a": rng.standard_normal((3, 2)), "b": rng.standard_normal((2, 3))}) <= LAYER_TOL


def test_conv2d_gradients(rng):
    target = rng.standard_normal((2, 3, 4, 3))

    def loss(p):
        return ad.mse(ad.conv2d(p["x"], p["w"], p["b"]), target)

    params = {"x": rng.standard_normal((2, 2, 7, 5)), "w": rng.standard_normal((3, 2, 3, 3)), "b": rng.standard_normal(3)}
    assert _check(loss, params) <= LAYER_TOL


@pytest.mark.parametrize("target_shape", [(7, 5), (8, 6), (6, 4)])
def test_conv_transpose2d_gradients(rng, target_shape):
    weights = rng.standard_normal((2, *target_shape))

    def loss(p):
        out = ad.conv_transpose2d(p["x"], p["w"], p["b"], target_shape)
        return ad.sum(out * weights)

    params = {"x": rng.standard_normal((2, 3, 4, 3)), "w": rng.standard_normal((3, 2, 3, 3)), "b": rng.standard_normal(2)}
    assert _check(loss, params) <= LAYER_TOL


def test_conv_transpose_is_adjoint_of_conv(rng):
    x = rng.standard_normal((1, 2, 7, 5))
    y = rng.standard_normal((1, 3, 4, 3))
    w = rng.standard_normal((3, 2, 3, 3))
    zero3, zero2 = np.zeros(3), np.zeros(2)
    forward = ad.conv2d(Node.const(x), Node.const(w), Node.const(zero3)).value
    adjoint = ad.conv_transpose2d(Node.const(y), Node.const(w), Node.const(zero2), (7, 5)).value
    assert np.sum(forward * y) == pytest.approx(np.sum(x * adjoint))


def test_conv_transpose_rejects_far_target(rng):
    x = Node.const(rng.standard_normal((1, 1, 4, 4)))
    w = Node.const(rng.standard_normal((1, 1, 3, 3)))
    with pytest.raises(ShapeMismatch):
        ad.conv_transpose2d(x, w, Node.const(np.zeros(1)), (20, 7))


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_gradients(rng, training):
    mean, var = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)
    weights = rng.standard_normal((4, 3, 2, 3))

    def loss(p):
        out = ad.batch_norm2d(p["x"], p["g"], p["b"], mean.copy(), var.copy(), training=training)
        return ad.sum(out * weights)

    params = {"x": rng.standard_normal((4, 3, 2, 3)), "g": rng.standard_normal(3), "b": rng.standard_normal(3)}
    assert _check(loss, params) <= LAYER_TOL


def test_batch_norm_updates_running_stats_only_in_training(rng):
    x = Node.const(rng.standard_normal((4, 2, 3, 3)) + 5.0)
    g, b = Node.const(np.ones(2)), Node.const(np.zeros(2))
    mean, var = np.zeros(2), np.ones(2)
    ad.batch_norm2d(x, g, b, mean, var, training=False)
    assert np.array_equal(mean, np.zeros(2))
    ad.batch_norm2d(x, g, b, mean, var, training=True)
    assert np.all(mean > 0.4)


def test_backward_needs_scalar():
    w = Node.leaf(np.ones(3), "w")
    with pytest.raises(NonScalarLoss):
        ad.backward(w * 2.0)


def test_shared_leaf_accumulates():
    w = Node.leaf(np.array([2.0]), "w")
    grads = ad.backward(ad.sum(w * w + w))
    assert grads["w"].tolist() == [5.0]


def test_frozen_prefix_gets_no_gradient(rng):
    store = LayerParams()
    a = Linear(store, "frozen.fc", 3, 2, rng)
    b = Linear(store, "free.fc", 2, 1, rng)
    g = Graph(store, frozen=("frozen",))
    out = b(g, a(g, g.input(rng.standard_normal((4, 3)))))
    grads = ad.backward(ad.sum(out))
    assert set(grads) == {"free.fc.weight", "free.fc.bias"}


def test_clip_grad_norm_scales_down():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
    before = clip_grad_norm(grads, 1.0)
    assert before == pytest.approx(5.0)
    assert global_norm(grads) == pytest.approx(1.0, rel=1e-5)


def test_adam_skips_missing_names(rng):
    store = LayerParams()
    Linear(store, "fc", 2, 2, rng)
    before = store.state()
    Adam(store, 1e-2).step({"fc.bias": np.ones(2, dtype=np.float32)})
    assert np.array_equal(store["fc.weight"], before["fc.weight"])
    assert not np.array_equal(store["fc.bias"], before["fc.bias"])
