"""DSP kernels for the nine black-box effects.

Every kernel has the signature ``kernel(x, p, rate) -> y`` where `x` is a
float64 mono signal, `p` maps parameter names to *physical* values (see
`core.ops` for the ranges) and `rate` is the sample rate. Kernels allocate
and zero all of their state on each call, never touch `x` in place, and
return a signal of the same length.

Linear time-invariant parts run through `scipy.signal.lfilter`/`sosfilt`;
only the level detectors and the flanger's swept feedback loop iterate per
sample in Python.
"""

from __future__ import annotations

import math
from typing import Callable, Dict

import numpy as np
import scipy.signal

from .utils import db_to_amplitude, one_pole_coefficient

Kernel = Callable[[np.ndarray, Dict[str, float], int], np.ndarray]

# Schroeder reverb constants (delays in ms at size_m = 25 m).
COMB_DELAYS_MS = (29.7, 37.1, 41.1, 43.7)
COMB_GAINS = (0.773, 0.802, 0.753, 0.733)
ALLPASS_DELAYS_MS = (5.0, 1.7)
ALLPASS_GAIN = 0.7
REFERENCE_ROOM_M = 25.0

# Longest second delay tap.
MAX_TAP_MS = 2000.0

# Downward gate floor.
GATE_FLOOR_DB = -80.0

# Crossovers are clamped to this fraction of the sample rate.
MAX_CUTOFF_FRACTION = 0.45

# Multiband per-band compressor timing.
BAND_ATTACK_MS = 5.0
BAND_RELEASE_MS = 150.0


# ----- Building blocks ----------------------------------------------------

def _ms_to_samples(ms: float, rate: int) -> int:
    """Round a duration to whole samples (at least one)."""
    return max(1, int(round(ms * rate / 1000.0)))


def _time_coefficient(seconds: float, rate: int) -> float:
    """One-pole smoothing coefficient for a time constant in seconds."""
    if seconds <= 0.0:
        return 0.0
    return math.exp(-1.0 / (seconds * rate))


def _one_pole_lowpass(x: np.ndarray, cutoff_hz: float, rate: int) -> np.ndarray:
    a = one_pole_coefficient(cutoff_hz, rate)
    return scipy.signal.lfilter([1.0 - a], [1.0, -a], x)


def _one_pole_highpass(x: np.ndarray, cutoff_hz: float, rate: int) -> np.ndarray:
    a = one_pole_coefficient(cutoff_hz, rate)
    return scipy.signal.lfilter([a, -a], [1.0, -a], x)


def _biquad_highpass(freq_hz: float, q: float, rate: int) -> tuple[np.ndarray, np.ndarray]:
    """RBJ cookbook high-pass coefficients (b, a), normalised so a[0] = 1."""
    w0 = 2.0 * math.pi * freq_hz / rate
    cos_w0 = math.cos(w0)
    alpha = math.sin(w0) / (2.0 * q)
    b = np.array([(1.0 + cos_w0) / 2.0, -(1.0 + cos_w0), (1.0 + cos_w0) / 2.0])
    a = np.array([1.0 + alpha, -2.0 * cos_w0, 1.0 - alpha])
    return b / a[0], a / a[0]


def _delay(x: np.ndarray, samples: int) -> np.ndarray:
    """Integer delay with zero history."""
    out = np.zeros_like(x)
    if samples < x.size:
        out[samples:] = x[:x.size - samples]
    return out


def _fractional_read(x: np.ndarray, delay: np.ndarray) -> np.ndarray:
    """Read x[n - delay[n]] with linear interpolation (zero before n = 0)."""
    n = np.arange(x.size, dtype=np.float64)
    pos = n - delay
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    padded = np.concatenate([[0.0], x])

    def at(idx: np.ndarray) -> np.ndarray:
        # index -1 and below read the leading zero
        return padded[np.clip(idx, -1, x.size - 1) + 1]

    return at(i0) * (1.0 - frac) + at(i0 + 1) * frac


def _follow(signal: np.ndarray, rise_coef: float, fall_coef: float) -> np.ndarray:
    """Smoothed follower: rises with `rise_coef`, falls with `fall_coef`."""
    out = np.empty(signal.size, dtype=np.float64)
    state = 0.0
    for i, v in enumerate(signal.tolist()):
        coef = rise_coef if v > state else fall_coef
        state = coef * state + (1.0 - coef) * v
        out[i] = state
    return out


def _compressor_gain(
        detector: np.ndarray,
        thresh_db: float,
        ratio: float,
        attack_s: float,
        release_s: float,
        rate: int,
    ) -> np.ndarray:
    """Feed-forward peak compressor gain (linear, ≤ 1)."""
    env = _follow(detector, _time_coefficient(attack_s, rate), _time_coefficient(release_s, rate))
    env_db = 20.0 * np.log10(np.maximum(env, 1e-12))
    over = np.maximum(env_db - thresh_db, 0.0)
    return 10.0 ** (-over * (1.0 - 1.0 / ratio) / 20.0)


def _linkwitz_riley(x: np.ndarray, cutoff_hz: float, btype: str, rate: int) -> np.ndarray:
    """4th-order Linkwitz-Riley section: two cascaded 2nd-order Butterworths."""
    cutoff_hz = min(cutoff_hz, MAX_CUTOFF_FRACTION * rate)
    sos = scipy.signal.butter(2, cutoff_hz, btype=btype, fs=rate, output="sos")
    return scipy.signal.sosfilt(sos, scipy.signal.sosfilt(sos, x))


# ----- Effects ------------------------------------------------------------

def ambience(x: np.ndarray, p: Dict[str, float], rate: int) -> np.ndarray:
    """Schroeder reverb: 4 damped feedback combs into 2 series all-passes.

    Each comb is v = z^-D·x + g·LP(v)·z^-D with LP a one-pole low-pass of
    coefficient hf_damp, i.e. the rational filter

      V/X = z^-D (1 - d z^-1) / ((1 - d z^-1) - g (1 - d) z^-D)
    """
    d = p["hf_damp"]
    scale = p["size_m"] / REFERENCE_ROOM_M
    wet = np.zeros_like(x)
    for delay_ms, g in zip(COMB_DELAYS_MS, COMB_GAINS):
        D = _ms_to_samples(delay_ms * scale, rate)
        b = np.zeros(D + 2)
        b[D] = 1.0
        b[D + 1] = -d
        a = np.zeros(D + 2)
        a[0] = 1.0
        a[1] = -d
        a[D] -= g * (1.0 - d)
        wet += scipy.signal.lfilter(b, a, x)
    wet *= 0.25

    for delay_ms in ALLPASS_DELAYS_MS:
        M = _ms_to_samples(delay_ms, rate)
        b = np.zeros(M + 1)
        b[0] = -ALLPASS_GAIN
        b[M] = 1.0
        a = np.zeros(M + 1)
        a[0] = 1.0
        a[M] = -ALLPASS_GAIN
        wet = scipy.signal.lfilter(b, a, wet)

    mix = p["mix"]
    return ((1.0 - mix) * x + mix * wet) * db_to_amplitude(p["output_db"])


def combo(x: np.ndarray, p: Dict[str, float], rate: int) -> np.ndarray:
    """Amp simulator: resonant high-pass, bias, tanh/clip waveshaper, DC block."""
    b, a = _biquad_highpass(p["hpf_freq"], p["hpf_reso"], rate)
    u = 3.0 * (scipy.signal.lfilter(b, a, x) + p["bias"])
    s = p["drive_s_h"]
    shaped = (1.0 - s) * np.tanh(u) + s * np.clip(u, -1.0, 1.0)
    return _one_pole_highpass(shaped, 10.0, rate) * db_to_amplitude(p["output_db"])


def _feedback_tone(tone: float, rate: int) -> tuple[float, float, float]:
    """Feedback filter (c0 + c1 z^-1) / (1 + a1 z^-1).

    Morphs identity ↔ one-pole low-pass at 200 Hz (tone = 0) and
    identity ↔ one-pole high-pass at 10 kHz (tone = 1); flat at tone = 0.5.
    """
    if tone < 0.5:
        k = 1.0 - 2.0 * tone
        a = one_pole_coefficient(200.0, rate)
        return 1.0 - k * a, -(1.0 - k) * a, -a
    k = 2.0 * tone - 1.0
    a = one_pole_coefficient(10000.0, rate)
    return 1.0 - k * (1.0 - a), -a, -a


def delay(x: np.ndarray, p: Dict[str, float], rate: int) -> np.ndarray:
    """Two-tap delay; the first tap recirculates through a tone filter.

    Feedback line: V = z^-D1 (1 + a1 z^-1) X / ((1 + a1 z^-1) - fb (c0 + c1 z^-1) z^-D1)
    Second tap: x delayed by l_delay · r_delay (capped at 2 s).
    """
    D1 = _ms_to_samples(p["l_delay_ms"], rate)
    D2 = _ms_to_samples(min(p["l_delay_ms"] * p["r_delay"], MAX_TAP_MS), rate)
    fb = p["feedback"]
    c0, c1, a1 = _feedback_tone(p["fb_tone_lo_hi"], rate)

    b = np.zeros(D1 + 2)
    b[D1] = 1.0
    b[D1 + 1] = a1
    a = np.zeros(D1 + 2)
    a[0] = 1.0
    a[1] += a1
    a[D1] -= fb * c0
    a[D1 + 1] -= fb * c1
    wet = 0.5 * (scipy.signal.lfilter(b, a, x) + _delay(x, D2))

    mix = p["fb_mix"]
    return (1.0 - mix) * x + mix * wet


def dynamics(x: np.ndarray, p: Dict[str, float], rate: int) -> np.ndarray:
    """Gate → compressor → brick-wall limiter on the wet path, parallel mix, trim."""
    level = np.abs(x)

    # Gate: fast peak detector, gain smoothed with gate attack/release.
    gate_detector = _follow(level, 0.0, _time_coefficient(0.010, rate))
    floor = db_to_amplitude(GATE_FLOOR_DB)
    open_target = np.where(
        20.0 * np.log10(np.maximum(gate_detector, 1e-12)) >= p["gate_thr_db"], 1.0, floor
    )
    gate = _follow(
        open_target,
        _time_coefficient(p["gate_att_s"], rate),
        _time_coefficient(p["gate_rel_ms"] / 1000.0, rate),
    )
    gated = x * gate

    comp = _compressor_gain(
        np.abs(gated), p["thresh_db"], p["ratio"], p["attack_s"], p["release_ms"] / 1000.0, rate
    )
    limit = db_to_amplitude(p["limiter_db"])
    wet = np.clip(gated * comp, -limit, limit)

    mix = p["mix"]
    return ((1.0 - mix) * x + mix * wet) * db_to_amplitude(p["output_db"])


def overdrive(x: np.ndarray, p: Dict[str, float], rate: int) -> np.ndarray:
    """Soft clipper tanh(g·x)/tanh(g), then a muffle low-pass and trim."""
    g = p["drive"]
    shaped = np.tanh(g * x) / math.tanh(g)
    cutoff = 10000.0 * 0.01 ** p["muffle"]
    return _one_pole_lowpass(shaped, cutoff, rate) * db_to_amplitude(p["output_db"])


def ringmod(x: np.ndarray, p: Dict[str, float], rate: int) -> np.ndarray:
    """y[n] = (x[n] + fb·y[n-1]) · sin(φ[n]), φ advancing (freq + fine)/rate cycles."""
    n = np.arange(x.size, dtype=np.float64)
    carrier = np.sin(2.0 * math.pi * (p["freq_hz"] + p["fine_hz"]) * n / rate)
    fb = p["feedback"]
    if fb == 0.0:
        return x * carrier

    out = np.empty_like(x)
    prev = 0.0
    for i, (xi, ci) in enumerate(zip(x.tolist(), carrier.tolist())):
        prev = (xi + fb * prev) * ci
        out[i] = prev
    return out


def leslie(x: np.ndarray, p: Dict[str, float], rate: int) -> np.ndarray:
    """Rotary speaker: one sinusoidal LFO drives a 0-2 ms Doppler delay and AM."""
    n = np.arange(x.size, dtype=np.float64)
    lfo = np.sin(2.0 * math.pi * p["rate_hz"] * n / rate)
    max_delay = 2.0 * rate / 1000.0
    moved = _fractional_read(x, p["doppler_depth"] * max_delay * (1.0 + lfo) / 2.0)
    am = 1.0 - p["am_depth"] * (1.0 - lfo) / 2.0
    return moved * am * db_to_amplitude(p["output_db"])


def multiband(x: np.ndarray, p: Dict[str, float], rate: int) -> np.ndarray:
    """Three-band compressor on Linkwitz-Riley splits."""
    low = _linkwitz_riley(x, p["xover_lo"], "lowpass", rate)
    rest = _linkwitz_riley(x, p["xover_lo"], "highpass", rate)
    mid = _linkwitz_riley(rest, p["xover_hi"], "lowpass", rate)
    high = _linkwitz_riley(rest, p["xover_hi"], "highpass", rate)

    out = np.zeros_like(x)
    for band, amount in ((low, p["comp_lo"]), (mid, p["comp_mid"]), (high, p["comp_hi"])):
        gain = _compressor_gain(
            np.abs(band),
            -40.0 * amount,
            1.0 + 9.0 * amount,
            BAND_ATTACK_MS / 1000.0,
            BAND_RELEASE_MS / 1000.0,
            rate,
        )
        out += band * gain
    return out * db_to_amplitude(p["output_db"])


def flanger(x: np.ndarray, p: Dict[str, float], rate: int) -> np.ndarray:
    """Thru-zero flanger.

    The dry path is delayed by `depth`; the wet path sweeps 0..2·depth with
    feedback and is subtracted, so the two cancel when the sweep crosses the
    dry delay.
    """
    depth = p["depth_ms"] * rate / 1000.0
    n = np.arange(x.size, dtype=np.float64)
    sweep = depth * (1.0 + np.sin(2.0 * math.pi * p["rate_hz"] * n / rate))
    dry = _fractional_read(x, np.full(x.size, depth))

    fb = p["feedback"]
    xs = x.tolist()
    buf = [0.0] * x.size
    wet = np.empty_like(x)
    for i, tau in enumerate(sweep.tolist()):
        pos = i - tau
        i0 = math.floor(pos)
        frac = pos - i0
        # buf[i] is being computed: the sub-sample part reads the input instead
        v0 = buf[i0] if 0 <= i0 < i else (xs[i] if i0 == i else 0.0)
        j = i0 + 1
        v1 = buf[j] if 0 <= j < i else (xs[i] if j == i else 0.0)
        w = v0 * (1.0 - frac) + v1 * frac
        buf[i] = xs[i] + fb * w
        wet[i] = w

    mix = p["mix"]
    return (1.0 - mix) * dry - mix * wet
