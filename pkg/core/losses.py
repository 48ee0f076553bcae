"""Audio-domain training objective and the cyclic KL schedule.

Per resolution (window = fft size, hop = fft / 4, Hann, no centre padding):

  sc  = ||T - P||_F / ||T||_F
  mag = mean |log(T + 1e-7) - log(P + 1e-7)|

with T, P the target and predicted magnitude spectrograms. The loss is the
mean of (sc + mag) over the resolutions that fit the signal. Gradients with
respect to the predicted samples are computed analytically: magnitude →
complex spectrum → irfft (the real-FFT adjoint) → window → overlap-add.
"""

from __future__ import annotations

import logging
import math
from functools import lru_cache
from typing import NamedTuple, Union

import numpy as np
import scipy.fft

from .audio import hann_window, stft_complex
from .config import KlScheduleConfig, MrstftConfig
from .errors import LengthMismatch, TooShort
from .types import AudioBuffer

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-7
_TINY = 1e-12

Signal = Union[AudioBuffer, np.ndarray]


class E2eLoss(NamedTuple):
    """L = mrstft + alpha · mae."""
    total:  float
    mrstft: float
    mae:    float


def _samples(x: Signal) -> np.ndarray:
    if isinstance(x, AudioBuffer):
        return x.samples
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _check_lengths(pred: np.ndarray, target: np.ndarray) -> None:
    if pred.shape[0] != target.shape[0]:
        raise LengthMismatch(f"prediction has {pred.shape[0]} samples, target has {target.shape[0]}")


def active_resolutions(length: int, cfg: MrstftConfig) -> list[int]:
    """FFT sizes that fit a signal of `length` samples.

    Examples:
      >>> active_resolutions(32768, MrstftConfig())
      [32, 128, 512, 2048, 8192, 32768]
      >>> active_resolutions(32767, MrstftConfig())[-1]
      8192
    """
    return [n for n in cfg.fft_sizes if n <= length]


def _resolution(pred: np.ndarray, target: np.ndarray, n_fft: int, with_grad: bool):
    hop = max(1, n_fft // 4)
    xp = stft_complex(pred, n_fft, n_fft, hop)
    mag_p = np.abs(xp)
    mag_t = np.abs(stft_complex(target, n_fft, n_fft, hop))

    diff = mag_t - mag_p
    diff_norm = math.sqrt(float(np.sum(diff * diff)))
    target_norm = math.sqrt(float(np.sum(mag_t * mag_t)))
    sc = diff_norm / (target_norm + _TINY)
    log_diff = np.log(mag_p + LOG_FLOOR) - np.log(mag_t + LOG_FLOOR)
    mag = float(np.mean(np.abs(log_diff)))
    if not with_grad:
        return sc + mag, None

    # dL/d|P|
    g_mag = np.sign(log_diff) / (log_diff.size * (mag_p + LOG_FLOOR))
    if diff_norm > 0.0:
        g_mag += (mag_p - mag_t) / (diff_norm * (target_norm + _TINY))

    # dL/dRe + i·dL/dIm; |X| has zero gradient at the origin.
    safe = np.where(mag_p > 0.0, mag_p, 1.0)
    g_complex = np.where(mag_p > 0.0, g_mag / safe, 0.0) * xp

    # Real-FFT adjoint: halve the bins that stand for a conjugate pair.
    h = g_complex.copy()
    last = n_fft // 2 if n_fft % 2 == 0 else h.shape[-1]
    h[:, 1:last] *= 0.5
    g_frames = n_fft * scipy.fft.irfft(h, n=n_fft, axis=-1) * hann_window(n_fft)

    grad = np.zeros_like(pred)
    starts = np.arange(g_frames.shape[0]) * hop
    idx = starts[:, None] + np.arange(n_fft)[None, :]
    np.add.at(grad, idx, g_frames)
    return sc + mag, grad


def mrstft_with_grad(pred: Signal, target: Signal, cfg: MrstftConfig) -> tuple[float, np.ndarray]:
    """Multi-resolution STFT loss and its gradient w.r.t. `pred`.

    Raises:
      LengthMismatch: Lengths differ.
      TooShort: The signal is shorter than every configured resolution.
    """
    return _mrstft(pred, target, cfg, with_grad=True)  # type: ignore[return-value]


def mrstft(pred: Signal, target: Signal, cfg: MrstftConfig) -> float:
    """Multi-resolution STFT loss (≥ 0, 0 when magnitudes agree everywhere).

    Raises:
      LengthMismatch: Lengths differ.
      TooShort: The signal is shorter than every configured resolution.
    """
    return _mrstft(pred, target, cfg, with_grad=False)[0]


@lru_cache(maxsize=None)
def _warn_skipped(length: int, skipped: tuple[int, ...]) -> None:
    log.warning("mrstft: skipping resolutions %s for %d-sample signals", list(skipped), length)


def _mrstft(pred: Signal, target: Signal, cfg: MrstftConfig, with_grad: bool):
    p, t = _samples(pred), _samples(target)
    _check_lengths(p, t)
    sizes = active_resolutions(p.shape[0], cfg)
    skipped = tuple(n for n in cfg.fft_sizes if n not in sizes)
    if skipped:
        _warn_skipped(p.shape[0], skipped)
    if not sizes:
        raise TooShort(f"signal of {p.shape[0]} samples is shorter than every MRSTFT resolution")

    total = 0.0
    grad = np.zeros_like(p) if with_grad else None
    for n_fft in sizes:
        value, g = _resolution(p, t, n_fft, with_grad)
        total += value
        if with_grad:
            grad += g
    scale = 1.0 / len(sizes)
    return total * scale, (grad * scale if with_grad else None)


def spectral_convergence(pred: Signal, target: Signal, n_fft: int) -> float:
    """Spectral-convergence term at one resolution."""
    p, t = _samples(pred), _samples(target)
    _check_lengths(p, t)
    hop = max(1, n_fft // 4)
    mag_p = np.abs(stft_complex(p, n_fft, n_fft, hop))
    mag_t = np.abs(stft_complex(t, n_fft, n_fft, hop))
    return float(np.linalg.norm(mag_t - mag_p) / (np.linalg.norm(mag_t) + _TINY))


def e2e_loss(pred: Signal, target: Signal, alpha: float, cfg: MrstftConfig) -> E2eLoss:
    """L = mrstft(pred, target) + alpha · mean|pred - target|.

    Raises:
      LengthMismatch: Lengths differ.
    """
    p, t = _samples(pred), _samples(target)
    _check_lengths(p, t)
    spectral = mrstft(p, t, cfg)
    mae = float(np.mean(np.abs(p - t))) if p.size else 0.0
    return E2eLoss(spectral + alpha * mae, spectral, mae)


def e2e_loss_with_grad(
        pred: Signal, target: Signal, alpha: float, cfg: MrstftConfig,
    ) -> tuple[E2eLoss, np.ndarray]:
    """`e2e_loss` plus dL/dpred."""
    p, t = _samples(pred), _samples(target)
    _check_lengths(p, t)
    spectral, grad = mrstft_with_grad(p, t, cfg)
    mae = float(np.mean(np.abs(p - t))) if p.size else 0.0
    grad = grad + alpha * np.sign(p - t) / max(p.size, 1)
    return E2eLoss(spectral + alpha * mae, spectral, mae), grad


def kl_weight(step: int, cfg: KlScheduleConfig) -> float:
    """Linear cyclical KL weight.

    L = total_steps / num_cycles, p = (step mod L) / L,
    weight = beta_max · min(1, p / ramp_fraction).

    Examples:
      >>> cfg = KlScheduleConfig(num_cycles=4, ramp_fraction=0.5, beta_max=1.0, total_steps=400)
      >>> kl_weight(0, cfg), kl_weight(25, cfg), kl_weight(60, cfg), kl_weight(100, cfg)
      (0.0, 0.5, 1.0, 0.0)
    """
    if cfg.total_steps <= 0:
        raise ValueError("kl schedule needs total_steps > 0")
    period = cfg.total_steps / cfg.num_cycles
    phase = (step % period) / period
    return cfg.beta_max * min(1.0, phase / cfg.ramp_fraction)
