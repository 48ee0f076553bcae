"""Lightweight file sniffing for audio and checkpoint inputs.

- `is_wav_path` checks filename extensions.
- `sniff_wav_header` parses just the RIFF/WAVE chunk list and the `fmt `
  chunk so unsupported or broken files fail with a precise error before the
  sample data is touched.
- `looks_like_checkpoint` checks the checkpoint magic bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from core.errors import AudioIoError, MalformedWav, UnsupportedFormat

# Recognized filename extensions for audio inputs.
ALLOWED_EXTENSIONS = {".wav", ".wave"}

# WAV format codes we accept, mapped to the only bit depth we read for each.
WAVE_FORMAT_PCM = 1
WAVE_FORMAT_IEEE_FLOAT = 3
WAVE_FORMAT_EXTENSIBLE = 0xFFFE
SUPPORTED_BITS = {WAVE_FORMAT_PCM: 16, WAVE_FORMAT_IEEE_FLOAT: 32}

CHECKPOINT_MAGIC = b"NDST"


@dataclass(frozen=True)
class WavHeader:
    """Parsed `fmt ` information of a WAV file."""
    format_code: int
    channels:    int
    sample_rate: int
    bits:        int
    data_bytes:  int


def is_wav_path(path: Union[str, Path]) -> bool:
    """Return True if the path has a WAV extension.

    Examples:
      >>> is_wav_path("take.wav")
      True
      >>> is_wav_path("TAKE.WAV")
      True
      >>> is_wav_path("take.flac")
      False
    """
    return Path(path).suffix.lower() in ALLOWED_EXTENSIONS


def parse_wav_header(blob: bytes) -> WavHeader:
    """Parse the RIFF chunk list of an in-memory WAV file.

    Raises:
      MalformedWav: Missing RIFF/WAVE tags, truncated chunks, or no
        `fmt `/`data` chunk.
      UnsupportedFormat: Format code other than PCM (1) / IEEE float (3),
        a bit depth other than 16 (PCM) / 32 (float), or more than 2 channels.

    Examples:
      >>> parse_wav_header(b"RIFX")
      Traceback (most recent call last):
      ...
      core.errors.MalformedWav: not a RIFF/WAVE file
    """
    if len(blob) < 12 or blob[0:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise MalformedWav("not a RIFF/WAVE file")

    fmt = None
    data_bytes = None
    pos = 12
    while pos + 8 <= len(blob):
        chunk_id = blob[pos:pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = pos + 8
        if chunk_id == b"fmt ":
            if size < 16 or body + size > len(blob):
                raise MalformedWav("truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", blob, body)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise MalformedWav("truncated WAVE_FORMAT_EXTENSIBLE fmt chunk")
                # Sub-format GUID starts with the real format code.
                (sub_code,) = struct.unpack_from("<H", blob, body + 24)
                fmt = (sub_code,) + fmt[1:]
        elif chunk_id == b"data":
            if body + size > len(blob):
                raise MalformedWav("data chunk extends past end of file")
            data_bytes = size
            break
        # Chunks are word aligned.
        pos = body + size + (size & 1)

    if fmt is None:
        raise MalformedWav("missing fmt chunk")
    if data_bytes is None:
        raise MalformedWav("missing data chunk")

    code, channels, rate, _byte_rate, _align, bits = fmt
    if code not in SUPPORTED_BITS:
        raise UnsupportedFormat(f"WAV format code {code} is not supported (PCM16 or float32 only)")
    if bits != SUPPORTED_BITS[code]:
        raise UnsupportedFormat(f"{bits}-bit samples are not supported for format code {code}")
    if channels not in (1, 2):
        raise UnsupportedFormat(f"{channels} channels are not supported (mono or stereo only)")
    if rate <= 0:
        raise MalformedWav("sample rate must be positive")
    return WavHeader(code, channels, rate, bits, data_bytes)


def sniff_wav_header(path: Union[str, Path]) -> WavHeader:
    """Read a file and parse its WAV header (see `parse_wav_header`)."""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise AudioIoError(f"could not read '{path}': {e}") from e
    return parse_wav_header(blob)


def looks_like_checkpoint(path: Union[str, Path]) -> bool:
    """Quick check that a file starts with the checkpoint magic."""
    try:
        with open(path, "rb") as f:
            return f.read(4) == CHECKPOINT_MAGIC
    except OSError:
        return False
