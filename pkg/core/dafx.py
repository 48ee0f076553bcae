"""Public interface to the black-box effects.

The rest of the toolkit treats `process` as an opaque, non-differentiable
map from (audio, θ) to audio. All functions are thread-safe: kernels keep
their state local to each call.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import UnknownEffect
from .ops import EFFECTS, TRAINING_EFFECTS, EffectEntry
from .types import AudioBuffer, EffectDescriptor, ParamVector

# Signature shared by `process` and test doubles handed to the SPSA bridge.
Processor = Callable[[str, AudioBuffer, ParamVector], AudioBuffer]


def effect_ids() -> list[str]:
    """All registered effect ids in registry order."""
    return list(EFFECTS)


def _lookup(effect_id: str) -> EffectEntry:
    try:
        return EFFECTS[effect_id]
    except KeyError:
        raise UnknownEffect(effect_id, effect_ids()) from None


def get_descriptor(effect_id: str) -> EffectDescriptor:
    """Return the descriptor for `effect_id`.

    Raises:
      UnknownEffect: The id is not registered.
    """
    return _lookup(effect_id).descriptor


def list_effects() -> list[EffectDescriptor]:
    """Return the nine effect descriptors, training set first.

    Examples:
      >>> [d.id for d in list_effects()][:3]
      ['ambience', 'combo', 'delay']
      >>> len(list_effects())
      9
    """
    return [entry.descriptor for entry in EFFECTS.values()]


def training_effects() -> list[str]:
    """Effect ids used for encoder training, in rotation order."""
    return list(TRAINING_EFFECTS)


def denormalize(effect: EffectDescriptor, theta: ParamVector) -> list[float]:
    """Map θ to physical parameter values.

    Linear: v = min + t·(max - min). Logarithmic: v = min·(max/min)^t.

    Raises:
      DimensionMismatch: θ has the wrong length for `effect`.
    """
    theta.check(effect)
    return [spec.to_physical(float(t)) for spec, t in zip(effect.params, theta.values)]


def physical_params(effect: EffectDescriptor, theta: ParamVector) -> dict[str, float]:
    """`denormalize` keyed by parameter name."""
    return dict(zip(effect.param_names, denormalize(effect, theta)))


def process(effect_id: str, audio: AudioBuffer, theta: ParamVector) -> AudioBuffer:
    """Apply an effect to a buffer.

    The output has the input's length and rate and is deterministic for a
    fixed (audio, θ).

    Raises:
      UnknownEffect: The id is not registered.
      DimensionMismatch: θ has the wrong length.
    """
    entry = _lookup(effect_id)
    params = physical_params(entry.descriptor, theta)
    out = entry.kernel(audio.samples, params, audio.sample_rate)
    return audio.with_samples(out)


def random_theta(effect_id: str, rng: np.random.Generator) -> ParamVector:
    """Draw θ with i.i.d. uniform coordinates on [0, 1].

    Raises:
      UnknownEffect: The id is not registered.
    """
    descriptor = get_descriptor(effect_id)
    return ParamVector(effect_id, rng.uniform(0.0, 1.0, size=descriptor.num_params))


def describe(effect_id: str) -> dict:
    """JSON-ready view of an effect descriptor."""
    descriptor = get_descriptor(effect_id)
    return {
        "id": descriptor.id,
        "category": descriptor.category,
        "held_out": descriptor.held_out,
        "params": [
            {
                "index": i,
                "name": spec.name,
                "min": spec.physical_min,
                "max": spec.physical_max,
                "mapping": spec.mapping.value,
                "unit": spec.unit,
            }
            for i, spec in enumerate(descriptor.params)
        ],
    }
