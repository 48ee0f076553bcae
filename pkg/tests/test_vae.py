import numpy as np
import pytest

from core import autodiff as ad
from core.errors import ShapeMismatch
from core.layers import Graph
from core.types import EncodeMode
from core.vae import LatentCode, SpectroVae, encoder_shapes, kl_divergence, vae_loss

SHAPE = (33, 31)


@pytest.fixture
def vae():
    return SpectroVae(SHAPE, latent_dim=8, channels=(2, 4, 4, 4), seed=5)


def test_encoder_shapes_tiny():
    assert encoder_shapes(SHAPE, 4) == [(33, 31), (17, 16), (9, 8), (5, 4), (3, 2)]


def test_encode_decode_shapes(vae, rng):
    g = Graph(vae.params)
    x = g.input(rng.uniform(size=(3, 1, *SHAPE)))
    code = vae.encode(g, x, EncodeMode.SAMPLE, rng)
    assert code.mu.shape == (3, 8) and code.z.shape == (3, 8)
    recon = vae.decode(g, code.z)
    assert recon.shape == (3, 1, *SHAPE)
    assert np.all((recon.value > 0) & (recon.value < 1))


def test_deterministic_mode_returns_mu(vae, rng):
    g = Graph(vae.params, training=False)
    code = vae.encode(g, g.input(rng.uniform(size=(2, 1, *SHAPE))), EncodeMode.DETERMINISTIC)
    assert code.z is code.mu


def test_sampling_needs_rng(vae, rng):
    g = Graph(vae.params)
    with pytest.raises(ValueError):
        vae.encode(g, g.input(rng.uniform(size=(2, 1, *SHAPE))), EncodeMode.SAMPLE)


def test_wrong_input_shape(vae, rng):
    g = Graph(vae.params)
    with pytest.raises(ShapeMismatch):
        vae.encode(g, g.input(rng.uniform(size=(2, 1, 32, 31))), EncodeMode.DETERMINISTIC)


def test_wrong_latent_width(vae, rng):
    g = Graph(vae.params)
    with pytest.raises(ShapeMismatch):
        vae.decode(g, g.input(rng.standard_normal((2, 7))))


def test_encoder_only_model_cannot_decode(rng):
    enc = SpectroVae(SHAPE, 8, (2, 4, 4, 4), with_decoder=False)
    assert not enc.params.names("decoder")
    g = Graph(enc.params)
    with pytest.raises(ShapeMismatch):
        enc.decode(g, g.input(np.zeros((1, 8))))


def test_same_seed_same_weights():
    a = SpectroVae(SHAPE, 8, (2, 4, 4, 4), seed=9).params.state()
    b = SpectroVae(SHAPE, 8, (2, 4, 4, 4), seed=9).params.state()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_embed_is_deterministic_and_batch_independent(vae, rng):
    specs = rng.uniform(size=(5, *SHAPE))
    whole = vae.embed(specs)
    chunked = vae.embed(specs, batch_size=2)
    assert whole.shape == (5, 8)
    np.testing.assert_allclose(whole, chunked, rtol=1e-5, atol=1e-6)


def test_kl_is_zero_for_standard_normal_posterior():
    zeros = ad.Node.const(np.zeros((4, 3)))
    assert kl_divergence(LatentCode(zeros, zeros, zeros)).item() == 0.0


def test_kl_closed_form():
    mu = ad.Node.const(np.full((2, 1), 1.0))
    log_var = ad.Node.const(np.zeros((2, 1)))
    assert kl_divergence(LatentCode(mu, log_var, mu)).item() == pytest.approx(0.5)


def test_vae_loss_parts(vae, rng):
    g = Graph(vae.params)
    x = g.input(rng.uniform(size=(3, 1, *SHAPE)))
    code = vae.encode(g, x, EncodeMode.SAMPLE, rng)
    parts = vae_loss(vae.decode(g, code.z), x, code, kl_weight=0.25)
    assert parts.total == pytest.approx(parts.reconstruction + 0.25 * parts.kl, rel=1e-5)
    grads = ad.backward(parts.node)
    assert "encoder.conv0.weight" in grads and "decoder.fc.weight" in grads
    assert "encoder.bn0.running_mean" not in grads


def test_full_stack_gradient_check(rng):
    model = SpectroVae((9, 9), latent_dim=3, channels=(2, 2), seed=1)
    model.params.astype(np.float64)
    x = rng.uniform(size=(3, 1, 9, 9))
    eps = rng.standard_normal((3, 3))
    # The store arrays themselves are perturbed, so the graph sees every step.
    params = {n: model.params[n] for n in model.params if model.params.is_trainable(n)}

    def loss(p):
        g = Graph(model.params, training=False)
        code = model.encode(g, g.input(x), EncodeMode.DETERMINISTIC)
        z = code.mu + ad.exp(code.log_var * 0.5) * eps
        return vae_loss(model.decode(g, z), g.input(x), LatentCode(code.mu, code.log_var, z), 0.5).node

    assert ad.gradient_check(loss, params, max_coords=150) <= 1e-3
