"""Small numeric helpers shared across modules."""

from __future__ import annotations

import math

import numpy as np

# Floor used when converting silent signals to dB.
DB_FLOOR = -240.0


def db_to_amplitude(db: float) -> float:
    """Convert decibels to a linear amplitude ratio.

    Examples:
      >>> round(db_to_amplitude(-12.0), 6)
      0.251189
      >>> db_to_amplitude(0.0)
      1.0
    """
    return 10.0 ** (db / 20.0)


def amplitude_to_db(amplitude: float) -> float:
    """Convert a linear amplitude to decibels (floored for silence).

    Examples:
      >>> amplitude_to_db(1.0)
      0.0
      >>> amplitude_to_db(0.0)
      -240.0
    """
    if amplitude <= 0.0:
        return DB_FLOOR
    return max(DB_FLOOR, 20.0 * math.log10(amplitude))


def rms(samples: np.ndarray) -> float:
    """Root-mean-square amplitude (0 for empty input)."""
    if samples.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.square(samples, dtype=np.float64))))


def rms_dbfs(samples: np.ndarray) -> float:
    """RMS level in dBFS."""
    return amplitude_to_db(rms(samples))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a generator for the stream (seed, *keys).

    Streams with different keys are independent and a stream never depends on
    how many other streams were drawn before it, so parallel and serial
    generation see identical numbers.

    Examples:
      >>> a = derive_rng(7, 3).random()
      >>> b = derive_rng(7, 3).random()
      >>> a == b
      True
    """
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def one_pole_coefficient(cutoff_hz: float, sample_rate: int) -> float:
    """Feedback coefficient a of y[n] = (1 - a)·x[n] + a·y[n-1].

    Examples:
      >>> one_pole_coefficient(0.0, 24000)
      1.0
    """
    return math.exp(-2.0 * math.pi * cutoff_hz / sample_rate)
