import numpy as np
import pytest

from core import autodiff as ad
from core.controller import Controller, StyleMatcher
from core.errors import ShapeMismatch
from core.layers import Graph, LayerParams

SHAPE = (33, 31)


@pytest.fixture
def matcher():
    return StyleMatcher(SHAPE, num_params=4, latent_dim=8, channels=(2, 4, 4, 4), hidden=(16, 8), seed=2)


def test_controller_input_width_is_two_latents(matcher):
    assert matcher.controller.in_features == 16
    assert matcher.num_params == 4


def test_default_width_is_256():
    store = LayerParams()
    head = Controller(store, 256, 5)
    assert store["controller.fc0.weight"].shape == (128, 256)
    assert store["controller.out.weight"].shape == (5, 32)
    assert head.num_params == 5


def test_theta_in_unit_interval(matcher, rng):
    theta = matcher.predict(rng.uniform(size=(3, *SHAPE)), rng.uniform(size=(3, *SHAPE)))
    assert theta.shape == (3, 4)
    assert np.all((theta >= 0.0) & (theta <= 1.0))


def test_predict_is_deterministic(matcher, rng):
    inputs, refs = rng.uniform(size=(2, *SHAPE)), rng.uniform(size=(2, *SHAPE))
    np.testing.assert_array_equal(matcher.predict(inputs, refs), matcher.predict(inputs, refs))


def test_mismatched_stacks(matcher, rng):
    with pytest.raises(ShapeMismatch):
        matcher.predict(rng.uniform(size=(2, *SHAPE)), rng.uniform(size=(3, *SHAPE)))


def test_controller_rejects_wrong_width(rng):
    store = LayerParams()
    head = Controller(store, 6, 2, hidden=(4,))
    g = Graph(store)
    with pytest.raises(ShapeMismatch):
        head(g, g.input(rng.standard_normal((2, 5))))


def test_siamese_branches_share_encoder_leaves(matcher, rng):
    g = Graph(matcher.params)
    theta = matcher.forward(g, rng.uniform(size=(2, *SHAPE)), rng.uniform(size=(2, *SHAPE)))
    grads = ad.backward(ad.sum(theta))
    assert grads["encoder.conv0.weight"].shape == matcher.params["encoder.conv0.weight"].shape
    assert not any(name.startswith("decoder") for name in matcher.params)


def test_frozen_encoder_gets_no_gradient(matcher, rng):
    g = Graph(matcher.params, frozen=("encoder",))
    theta = matcher.forward(g, rng.uniform(size=(2, *SHAPE)), rng.uniform(size=(2, *SHAPE)))
    grads = ad.backward(ad.sum(theta))
    assert grads and all(name.startswith("controller") for name in grads)


def test_controller_gradient_check(rng):
    store = LayerParams(np.float64)
    head = Controller(store, 6, 3, hidden=(5, 4), seed=4)
    h = rng.standard_normal((4, 6))
    weights = rng.standard_normal((4, 3))
    params = {n: store[n] for n in store}

    def loss(p):
        g = Graph(store)
        return ad.sum(head(g, g.input(h)) * weights)

    assert ad.gradient_check(loss, params) <= 1e-3
