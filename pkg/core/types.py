"""Shared types for the style-matching toolkit.

Defines:
  - AudioBuffer: mono signal + sample rate, the currency between modules.
  - StftConfig / Spectrogram: the time-frequency front-end types.
  - Mapping, ParamSpec, EffectDescriptor, ParamVector: black-box effect
    identity and its normalised parameter setting θ.
  - Side, SourceKind, EncodeMode, Split: small enums used across modules.
  - PairedExample: one self-supervised training pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidAudio, InvalidSetting, NonFiniteAudio


class Mapping(Enum):
    """How a normalised coordinate t ∈ [0, 1] maps to physical units."""

    LINEAR = "linear"
    LOGARITHMIC = "logarithmic"


class Side(Enum):
    """Which half of a patch the model sees as input."""

    A = "a"
    B = "b"

    @property
    def other(self) -> "Side":
        """Return the opposite half."""
        return Side.B if self is Side.A else Side.A


class SourceKind(Enum):
    """Synthetic corpus generator kinds."""

    HARMONIC = "harmonic"
    NOISE_BURST = "noise_burst"
    CHIRP = "chirp"
    PULSE_TRAIN = "pulse_train"


class EncodeMode(Enum):
    """Latent sampling mode for the encoder."""

    SAMPLE = auto()         # z = mu + sigma * eps
    DETERMINISTIC = auto()  # z = mu


class Split(Enum):
    """Metric log split labels."""

    TRAIN = "train"
    VAL = "val"


@dataclass(eq=False)
class AudioBuffer:
    """Mono audio signal.

    Samples are stored as float64; WAV output converts to float32.

    Attributes:
      samples: 1-D array of amplitudes, nominal range [-1, 1].
      sample_rate: Sample rate in Hz (> 0).
    """
    samples:     np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate) <= 0:
            raise InvalidAudio(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise NonFiniteAudio("audio buffer contains NaN or Inf samples")

    def __len__(self) -> int:
        """Return the number of samples."""
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return len(self) / self.sample_rate

    @property
    def peak(self) -> float:
        """Maximum absolute amplitude (0 for an empty buffer)."""
        return float(np.max(np.abs(self.samples))) if len(self) else 0.0

    def with_samples(self, samples: np.ndarray) -> "AudioBuffer":
        """Return a new buffer at the same rate holding `samples`."""
        return AudioBuffer(samples, self.sample_rate)

    def slice(self, start: int, stop: int) -> "AudioBuffer":
        """Return samples[start:stop] as a new buffer."""
        return AudioBuffer(self.samples[start:stop].copy(), self.sample_rate)

    def halves(self) -> tuple["AudioBuffer", "AudioBuffer"]:
        """Split into segments a and b of equal length (odd tail dropped)."""
        half = len(self) // 2
        return self.slice(0, half), self.slice(half, 2 * half)


@dataclass(frozen=True)
class StftConfig:
    """Short-time Fourier transform settings.

    Attributes:
      fft_bins: FFT size.
      window_len: Hann window length (≤ fft_bins).
      hop_len: Frame hop (≤ window_len).
      compression_exponent: Magnitude exponent applied to |X|.
    """
    fft_bins:             int
    window_len:           int
    hop_len:              int
    compression_exponent: float = 0.3

    def __post_init__(self) -> None:
        if not 0 < self.window_len <= self.fft_bins:
            raise InvalidSetting("window_len must satisfy 0 < window_len <= fft_bins")
        if not 0 < self.hop_len <= self.window_len:
            raise InvalidSetting("hop_len must satisfy 0 < hop_len <= window_len")
        if self.compression_exponent <= 0:
            raise InvalidSetting("compression_exponent must be positive")

    @property
    def freq_bins(self) -> int:
        """Number of one-sided frequency bins."""
        return self.fft_bins // 2 + 1

    def frames_for(self, length: int) -> int:
        """Frame count for a signal of `length` samples (no centre padding)."""
        if length < self.window_len:
            return 0
        return 1 + (length - self.window_len) // self.hop_len


@dataclass(eq=False)
class Spectrogram:
    """Magnitude-compressed spectrogram, shape [freq_bins × frames]."""
    data:   np.ndarray
    config: StftConfig

    @property
    def shape(self) -> tuple[int, int]:
        """(freq_bins, frames)."""
        return tuple(self.data.shape)  # type: ignore[return-value]


@dataclass(frozen=True)
class ParamSpec:
    """One continuous effect parameter.

    Attributes:
      name: Identifier, unique within an effect.
      physical_min: Physical value at t = 0.
      physical_max: Physical value at t = 1.
      mapping: Linear or logarithmic interpolation between the two.
      unit: Display unit (Hz, dB, ms, s, ratio, or empty).
    """
    name:         str
    physical_min: float
    physical_max: float
    mapping:      Mapping = Mapping.LINEAR
    unit:         str = ""

    def __post_init__(self) -> None:
        if not self.physical_min < self.physical_max:
            raise InvalidSetting(f"{self.name}: physical_min must be < physical_max")
        if self.mapping is Mapping.LOGARITHMIC and self.physical_min <= 0:
            raise InvalidSetting(f"{self.name}: logarithmic mapping needs physical_min > 0")

    def to_physical(self, t: float) -> float:
        """Map a normalised value to physical units."""
        if self.mapping is Mapping.LOGARITHMIC:
            return self.physical_min * (self.physical_max / self.physical_min) ** t
        return self.physical_min + t * (self.physical_max - self.physical_min)


@dataclass(frozen=True)
class EffectDescriptor:
    """Identity and parameter layout of a black-box effect.

    The order of `params` defines the coordinate order of θ.
    """
    id:       str
    category: str
    params:   tuple[ParamSpec, ...]
    held_out: bool = False

    def __post_init__(self) -> None:
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise InvalidSetting(f"{self.id}: parameter names must be unique")

    @property
    def num_params(self) -> int:
        """P, the dimension of θ."""
        return len(self.params)

    @property
    def param_names(self) -> list[str]:
        """Parameter names in θ order."""
        return [p.name for p in self.params]

    def index(self, name: str) -> int:
        """Return the θ coordinate of parameter `name`."""
        return self.param_names.index(name)


@dataclass(eq=False)
class ParamVector:
    """Normalised parameter setting θ ∈ [0, 1]^P for one effect."""
    effect_id: str
    values:    np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise InvalidSetting("theta contains non-finite values")
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise InvalidSetting("theta values must lie in [0, 1]")

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def check(self, descriptor: EffectDescriptor) -> None:
        """Raise DimensionMismatch unless θ fits `descriptor`."""
        if len(self) != descriptor.num_params:
            raise DimensionMismatch(
                f"{descriptor.id} expects {descriptor.num_params} parameters, got {len(self)}"
            )

    def replace(self, name_or_index: int, value: float) -> "ParamVector":
        """Return a copy with one coordinate changed."""
        values = self.values.copy()
        values[name_or_index] = value
        return ParamVector(self.effect_id, values)

    @classmethod
    def of(cls, effect_id: str, values: Sequence[float]) -> "ParamVector":
        """Convenience constructor from a plain sequence."""
        return cls(effect_id, np.asarray(values, dtype=np.float64))


@dataclass(eq=False)
class PairedExample:
    """One self-supervised pair.

    Attributes:
      input_seg: Unprocessed segment the model sees as input.
      ref_seg: Effected segment from the other half (the reference).
      truth_seg: Effected segment aligned with input_seg (the loss target).
      theta: Ground-truth parameter setting.
      side: Which half input_seg came from.
    """
    input_seg: AudioBuffer
    ref_seg:   AudioBuffer
    truth_seg: AudioBuffer
    theta:     ParamVector
    side:      Side
    meta:      dict = field(default_factory=dict)
