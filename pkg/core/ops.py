"""Effect dispatch table.

Maps every effect id to its descriptor (parameter names, physical ranges,
mappings) and its DSP kernel. The descriptor's parameter order is the
coordinate order of θ.

Notes:
  - The six training-set effects expose the controls the encoder and
    controller were designed around; the three held-out effects (leslie,
    multiband, flanger) only serve to test controller-only retraining.
  - Ranges are design decisions; `describe-effect` prints them.
"""

from __future__ import annotations

from typing import Dict, NamedTuple

from . import effects
from .effects import Kernel
from .types import EffectDescriptor, Mapping, ParamSpec

LIN = Mapping.LINEAR
LOG = Mapping.LOGARITHMIC

# Recursive loops (ringmod, flanger) stay within 1 / (1 - 0.9) = 10 for peak-1 input.
MAX_LOOP_FEEDBACK = 0.9


class EffectEntry(NamedTuple):
    """Descriptor plus the kernel that implements it."""
    descriptor: EffectDescriptor
    kernel:     Kernel


def _entry(effect_id: str, category: str, kernel: Kernel, *params: ParamSpec,
           held_out: bool = False) -> EffectEntry:
    return EffectEntry(EffectDescriptor(effect_id, category, tuple(params), held_out), kernel)


def build_effects() -> Dict[str, EffectEntry]:
    """Return the effect dispatch table, training effects first.

    Returns:
      Dict mapping effect id to (descriptor, kernel), in registry order.
    """
    table = [
        # Training set.
        _entry("ambience", "reverb", effects.ambience,
               ParamSpec("mix", 0.0, 1.0, LIN),
               ParamSpec("size_m", 1.0, 50.0, LIN, "m"),
               ParamSpec("hf_damp", 0.0, 1.0, LIN),
               ParamSpec("output_db", -20.0, 6.0, LIN, "dB")),
        _entry("combo", "amp simulator", effects.combo,
               ParamSpec("hpf_freq", 20.0, 2000.0, LOG, "Hz"),
               ParamSpec("hpf_reso", 0.5, 10.0, LIN),
               ParamSpec("drive_s_h", 0.0, 1.0, LIN),
               ParamSpec("bias", -0.5, 0.5, LIN),
               ParamSpec("output_db", -24.0, 12.0, LIN, "dB")),
        _entry("delay", "delay", effects.delay,
               ParamSpec("l_delay_ms", 1.0, 1000.0, LOG, "ms"),
               ParamSpec("r_delay", 0.25, 4.0, LOG, "ratio"),
               ParamSpec("feedback", 0.0, 0.95, LIN),
               ParamSpec("fb_tone_lo_hi", 0.0, 1.0, LIN),
               ParamSpec("fb_mix", 0.0, 1.0, LIN)),
        _entry("dynamics", "compressor/limiter/gate", effects.dynamics,
               ParamSpec("output_db", -20.0, 20.0, LIN, "dB"),
               ParamSpec("gate_thr_db", -80.0, -20.0, LIN, "dB"),
               ParamSpec("mix", 0.0, 1.0, LIN),
               ParamSpec("release_ms", 10.0, 1000.0, LOG, "ms"),
               ParamSpec("gate_rel_ms", 10.0, 1000.0, LOG, "ms"),
               ParamSpec("limiter_db", -12.0, 0.0, LIN, "dB"),
               ParamSpec("ratio", 1.0, 20.0, LOG, "ratio"),
               ParamSpec("thresh_db", -60.0, 0.0, LIN, "dB"),
               ParamSpec("gate_att_s", 0.0001, 0.1, LOG, "s"),
               ParamSpec("attack_s", 0.0001, 0.1, LOG, "s")),
        _entry("overdrive", "soft distortion", effects.overdrive,
               ParamSpec("muffle", 0.0, 1.0, LIN),
               ParamSpec("drive", 1.0, 100.0, LOG),
               ParamSpec("output_db", -20.0, 20.0, LIN, "dB")),
        _entry("ringmod", "ring modulation", effects.ringmod,
               ParamSpec("freq_hz", 0.0, 1000.0, LIN, "Hz"),
               ParamSpec("fine_hz", 0.0, 10.0, LIN, "Hz"),
               ParamSpec("feedback", 0.0, MAX_LOOP_FEEDBACK, LIN)),

        # Held out of encoder training.
        _entry("leslie", "rotary speaker simulator", effects.leslie,
               ParamSpec("rate_hz", 0.1, 8.0, LOG, "Hz"),
               ParamSpec("doppler_depth", 0.0, 1.0, LIN),
               ParamSpec("am_depth", 0.0, 1.0, LIN),
               ParamSpec("output_db", -20.0, 20.0, LIN, "dB"),
               held_out=True),
        _entry("multiband", "multi-band compressor", effects.multiband,
               ParamSpec("xover_lo", 50.0, 500.0, LOG, "Hz"),
               ParamSpec("xover_hi", 500.0, 8000.0, LOG, "Hz"),
               ParamSpec("comp_lo", 0.0, 1.0, LIN),
               ParamSpec("comp_mid", 0.0, 1.0, LIN),
               ParamSpec("comp_hi", 0.0, 1.0, LIN),
               ParamSpec("output_db", -20.0, 6.0, LIN, "dB"),
               held_out=True),
        _entry("flanger", "tape-flanging simulator", effects.flanger,
               ParamSpec("rate_hz", 0.01, 5.0, LOG, "Hz"),
               ParamSpec("depth_ms", 0.1, 10.0, LIN, "ms"),
               ParamSpec("feedback", -MAX_LOOP_FEEDBACK, MAX_LOOP_FEEDBACK, LIN),
               ParamSpec("mix", 0.0, 1.0, LIN),
               held_out=True),
    ]
    return {entry.descriptor.id: entry for entry in table}


# Built once; entries are immutable.
EFFECTS: Dict[str, EffectEntry] = build_effects()

# Effects cycled through during encoder training, in rotation order.
TRAINING_EFFECTS: tuple[str, ...] = tuple(
    eid for eid, entry in EFFECTS.items() if not entry.descriptor.held_out
)
