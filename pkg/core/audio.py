"""Audio containers I/O and the spectrogram front-end.

All functions here are pure: they never mutate their inputs and keep no
module state, so they are safe to call from several threads at once.

Conventions:
  - Buffers are mono; stereo files are averaged on read.
  - STFT frames are not centre-padded:
      frames = 1 + floor((len - window_len) / hop_len)
  - Spectrogram entries are |X| ** compression_exponent.
"""

from __future__ import annotations

import io
import logging
from pathlib import Path
from typing import Union

import numpy as np
import scipy.fft
import scipy.signal
from scipy.io import wavfile

from validate.validate_load import parse_wav_header

from .errors import AudioIoError, MalformedWav, SilentInput, TooShort
from .types import AudioBuffer, Spectrogram, StftConfig
from .utils import db_to_amplitude

log = logging.getLogger(__name__)

# Output level used for every normalised signal in the pipeline.
REFERENCE_DBFS = -12.0


def resample_linear(samples: np.ndarray, source_rate: int, target_rate: int) -> np.ndarray:
    """Resample by linear interpolation at each output instant.

    Output sample n sits at time n / target_rate, i.e. at fractional source
    index n · source_rate / target_rate.

    Examples:
      >>> resample_linear(np.array([0.0, 1.0, 2.0, 3.0]), 2, 1).tolist()
      [0.0, 2.0]
    """
    if source_rate == target_rate or samples.size == 0:
        return samples.astype(np.float64, copy=True)
    n_out = (samples.size * target_rate) // source_rate
    positions = np.arange(n_out, dtype=np.float64) * (source_rate / target_rate)
    return np.interp(positions, np.arange(samples.size, dtype=np.float64), samples)


def read_wav(path: Union[str, Path], target_rate: int) -> AudioBuffer:
    """Read a PCM16 or float32 WAV file as a mono buffer at `target_rate`.

    Args:
      path: WAV file.
      target_rate: Output sample rate; other rates are linearly resampled.

    Raises:
      MalformedWav: Bad RIFF header or chunk layout.
      UnsupportedFormat: Compression codes other than 1/3, or other bit depths.
      AudioIoError: The file could not be read.
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise AudioIoError(f"could not read '{path}': {e}") from e
    # Gates the format; scipy would accept more than PCM16 and float32.
    parse_wav_header(blob)
    try:
        rate, data = wavfile.read(io.BytesIO(blob))
    except ValueError as e:
        raise MalformedWav(f"'{path}': {e}") from e

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    else:
        samples = data.astype(np.float64)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)

    samples = resample_linear(samples, int(rate), target_rate)
    return AudioBuffer(samples, target_rate)


def write_wav(buffer: AudioBuffer, path: Union[str, Path]) -> None:
    """Write a buffer as a mono IEEE-float32 WAV file.

    Raises:
      AudioIoError: The file could not be written.
    """
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        wavfile.write(str(path), buffer.sample_rate, buffer.samples.astype(np.float32))
    except OSError as e:
        raise AudioIoError(f"could not write '{path}': {e}") from e


def peak_normalize(buffer: AudioBuffer, target_dbfs: float = REFERENCE_DBFS) -> AudioBuffer:
    """Scale a buffer so its peak sits at `target_dbfs`.

    Raises:
      SilentInput: The buffer is all zeros.
    """
    peak = buffer.peak
    if peak <= 0.0:
        raise SilentInput("cannot peak-normalise a silent buffer")
    return buffer.with_samples(buffer.samples * (db_to_amplitude(target_dbfs) / peak))


def level_match(buffer: AudioBuffer, target_dbfs: float = REFERENCE_DBFS) -> AudioBuffer:
    """Peak-normalise, passing silent buffers through unchanged."""
    if buffer.peak <= 0.0:
        return buffer.with_samples(buffer.samples.copy())
    return peak_normalize(buffer, target_dbfs)


def frame_signal(samples: np.ndarray, window_len: int, hop_len: int) -> np.ndarray:
    """Return a read-only [frames × window_len] view of overlapping frames."""
    frames = np.lib.stride_tricks.sliding_window_view(samples, window_len)
    return frames[::hop_len]


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window."""
    return scipy.signal.get_window("hann", length)


def stft_complex(samples: np.ndarray, fft_bins: int, window_len: int, hop_len: int) -> np.ndarray:
    """Complex STFT, shape [frames × (fft_bins/2 + 1)]; caller checks length."""
    frames = frame_signal(samples, window_len, hop_len) * hann_window(window_len)
    return scipy.fft.rfft(frames, n=fft_bins, axis=-1)


def stft_magnitude(buffer: AudioBuffer, config: StftConfig) -> Spectrogram:
    """Compressed magnitude spectrogram, shape [freq_bins × frames].

    Raises:
      TooShort: The buffer is shorter than one window.
    """
    if len(buffer) < config.window_len:
        raise TooShort(
            f"buffer of {len(buffer)} samples is shorter than window {config.window_len}"
        )
    spec = stft_complex(buffer.samples, config.fft_bins, config.window_len, config.hop_len)
    magnitude = np.abs(spec).T ** config.compression_exponent
    return Spectrogram(np.ascontiguousarray(magnitude), config)


def normalize_spectrogram(spec: Spectrogram) -> Spectrogram:
    """Scale entries into [0, 1] by the global maximum (all-zero passes through)."""
    peak = float(spec.data.max()) if spec.data.size else 0.0
    if peak <= 0.0:
        return Spectrogram(spec.data.copy(), spec.config)
    return Spectrogram(spec.data / peak, spec.config)


def fit_length(buffer: AudioBuffer, length: int) -> AudioBuffer:
    """Crop or zero-pad a buffer to exactly `length` samples."""
    if len(buffer) >= length:
        return buffer.slice(0, length)
    padded = np.zeros(length, dtype=np.float64)
    padded[:len(buffer)] = buffer.samples
    return buffer.with_samples(padded)
