"""SPSA gradient bridge across a black-box effect.

Forward applies the effect and records its inputs. Backward estimates
dLoss/dθ from two effect evaluations per draw:

  Δ ~ Rademacher{-1, +1}^P
  d = <upstream, f(θ + εΔ) - f(θ - εΔ)> / (2ε)
  ĝ = d · Δ                                  (averaged over num_draws)

θ is clamped to [ε, 1 - ε] first so both perturbations stay inside [0, 1].
The gradient with respect to the input audio is zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import dafx
from .config import SpsaConfig
from .dafx import Processor
from .errors import LengthMismatch
from .types import AudioBuffer, ParamVector


@dataclass(frozen=True)
class EffectContext:
    """What the backward pass needs from the forward call."""
    effect_id: str
    audio:     AudioBuffer
    theta:     ParamVector
    processor: Processor


def clamp_theta(theta: Union[ParamVector, np.ndarray], epsilon: float) -> Union[ParamVector, np.ndarray]:
    """Clip coordinates to [ε, 1 - ε].

    Examples:
      >>> clamp_theta(np.array([0.5, 0.0, 1.0]), 1e-2).tolist()
      [0.5, 0.01, 0.99]
    """
    if isinstance(theta, ParamVector):
        return ParamVector(theta.effect_id, np.clip(theta.values, epsilon, 1.0 - epsilon))
    return np.clip(np.asarray(theta, dtype=np.float64), epsilon, 1.0 - epsilon)


def effect_forward(
        effect_id: str,
        audio: AudioBuffer,
        theta: ParamVector,
        processor: Processor = dafx.process,
    ) -> tuple[AudioBuffer, EffectContext]:
    """Apply the effect and record the call for `effect_backward`."""
    out = processor(effect_id, audio, theta)
    return out, EffectContext(effect_id, audio, theta, processor)


def _rademacher(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.integers(0, 2, size=size).astype(np.float64) * 2.0 - 1.0


def effect_backward(
        upstream: np.ndarray,
        ctx: EffectContext,
        cfg: SpsaConfig,
        rng: np.random.Generator,
    ) -> np.ndarray:
    """Estimate dLoss/dθ (a P-vector) given dLoss/d(output audio).

    Raises:
      LengthMismatch: upstream length differs from the recorded audio.
    """
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if upstream.shape[0] != len(ctx.audio):
        raise LengthMismatch(
            f"upstream gradient has {upstream.shape[0]} samples, audio has {len(ctx.audio)}"
        )
    p = len(ctx.theta)
    if not np.any(upstream):
        return np.zeros(p)

    eps = cfg.epsilon
    center = clamp_theta(ctx.theta.values, eps)
    total = np.zeros(p)
    for _ in range(cfg.num_draws):
        delta = _rademacher(rng, p)
        plus = ParamVector(ctx.effect_id, np.clip(center + eps * delta, 0.0, 1.0))
        minus = ParamVector(ctx.effect_id, np.clip(center - eps * delta, 0.0, 1.0))
        y_plus = ctx.processor(ctx.effect_id, ctx.audio, plus).samples
        y_minus = ctx.processor(ctx.effect_id, ctx.audio, minus).samples
        d = float(np.dot(upstream, y_plus - y_minus)) / (2.0 * eps)
        total += d * delta
    return total / cfg.num_draws


def spsa_gradient(
        effect_id: str,
        audio: AudioBuffer,
        theta: ParamVector,
        upstream: np.ndarray,
        cfg: SpsaConfig,
        rng: np.random.Generator,
        processor: Optional[Processor] = None,
    ) -> np.ndarray:
    """One-shot estimate without a preceding forward call."""
    ctx = EffectContext(effect_id, audio, theta, processor or dafx.process)
    return effect_backward(upstream, ctx, cfg, rng)
