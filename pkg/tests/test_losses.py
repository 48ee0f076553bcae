import numpy as np
import pytest

from core.config import KlScheduleConfig, MrstftConfig
from core.errors import LengthMismatch, TooShort
from core.losses import (
    active_resolutions, e2e_loss, e2e_loss_with_grad, kl_weight, mrstft, mrstft_with_grad, spectral_convergence,
)
from core.types import AudioBuffer

SMALL = MrstftConfig(fft_sizes=(32, 128, 512))


def test_identical_signals_have_zero_loss(noise):
    assert mrstft(noise, noise, SMALL) == 0.0
    assert e2e_loss(noise, noise, 100.0, SMALL).total == 0.0


def test_loss_is_positive_for_different_signals(noise, rng):
    other = AudioBuffer(0.3 * rng.standard_normal(len(noise)), noise.sample_rate)
    assert mrstft(noise, other, SMALL) > 0.0


def test_spectral_convergence_of_silence_is_one(noise):
    silence = np.zeros(len(noise))
    assert spectral_convergence(silence, noise, 512) == pytest.approx(1.0)


def test_sign_flipped_prediction_has_zero_spectral_loss(noise):
    flipped = -noise.samples
    assert mrstft(flipped, noise, SMALL) == 0.0
    loss = e2e_loss(flipped, noise, 100.0, SMALL)
    assert loss.mrstft == 0.0
    assert loss.total == pytest.approx(100.0 * np.mean(2.0 * np.abs(noise.samples)))


def test_silent_prediction_against_signal(noise):
    silence = np.zeros(len(noise))
    value, grad = mrstft_with_grad(silence, noise, SMALL)
    # Every resolution contributes sc = 1 plus a positive log-magnitude term.
    assert np.isfinite(value) and value > 1.0
    assert np.all(np.isfinite(grad))


def test_signal_against_silent_target_stays_finite(noise):
    value = mrstft(noise, np.zeros(len(noise)), SMALL)
    assert np.isfinite(value) and value > 1.0


def test_silence_against_silence_is_zero():
    silence = np.zeros(1024)
    assert mrstft(silence, silence, SMALL) == 0.0


def test_e2e_loss_composition(noise, rng):
    pred = noise.samples + 0.05 * rng.standard_normal(len(noise))
    loss = e2e_loss(pred, noise, 100.0, SMALL)
    assert loss.mae == pytest.approx(np.mean(np.abs(pred - noise.samples)))
    assert loss.total == pytest.approx(loss.mrstft + 100.0 * loss.mae)
    assert e2e_loss(pred, noise, 0.0, SMALL).total == pytest.approx(loss.mrstft)


def test_length_mismatch(noise):
    with pytest.raises(LengthMismatch):
        mrstft(noise.samples[:-1], noise, SMALL)


def test_signal_shorter_than_every_resolution():
    with pytest.raises(TooShort):
        mrstft(np.ones(16), np.ones(16), SMALL)


def test_long_resolutions_are_skipped():
    assert active_resolutions(300, SMALL) == [32, 128]


def test_gradient_matches_finite_differences(rng):
    target = rng.standard_normal(600)
    pred = target + 0.3 * rng.standard_normal(600)
    _, grad = e2e_loss_with_grad(pred, target, 2.0, SMALL)
    for i in rng.choice(600, size=12, replace=False):
        h = 1e-7
        up, down = pred.copy(), pred.copy()
        up[i] += h
        down[i] -= h
        numeric = (e2e_loss(up, target, 2.0, SMALL).total - e2e_loss(down, target, 2.0, SMALL).total) / (2 * h)
        assert grad[i] == pytest.approx(numeric, rel=1e-3, abs=1e-6)


def test_mrstft_value_agrees_with_and_without_grad(noise, rng):
    other = noise.samples + 0.1 * rng.standard_normal(len(noise))
    value, grad = mrstft_with_grad(other, noise, SMALL)
    assert value == pytest.approx(mrstft(other, noise, SMALL))
    assert grad.shape == (len(noise),)


@pytest.mark.parametrize("step,expected", [(0, 0.0), (10, 0.4), (25, 1.0), (49, 1.0), (50, 0.0), (60, 0.4)])
def test_kl_weight_cycles(step, expected):
    cfg = KlScheduleConfig(num_cycles=4, ramp_fraction=0.5, beta_max=1.0, total_steps=200)
    assert kl_weight(step, cfg) == pytest.approx(expected)


def test_kl_weight_scales_with_beta_max():
    cfg = KlScheduleConfig(num_cycles=1, ramp_fraction=0.5, beta_max=0.2, total_steps=10)
    assert kl_weight(9, cfg) == pytest.approx(0.2)


def test_kl_weight_needs_steps():
    with pytest.raises(ValueError):
        kl_weight(0, KlScheduleConfig())
