"""Self-supervised paired-example generation.

Pipeline for one example:

  1. sample_patch: a non-silent stretch of a corpus source, with margin for
     the pitch shift.
  2. augment: pitch shift by resampling (±2 semitones) and a random crop.
  3. make_pair: peak-normalise the unaffected patch, run the effect over the
     whole patch with a random θ, peak-normalise the result, then split both
     into halves a|b and pick a side. The model sees the unaffected half of
     that side plus the effected other half; the loss target is the effected
     half of the same side. Effect tails cross the split and the two effected
     halves keep their relative level.

Every example index draws from its own rng stream, so serial and threaded
generation produce identical examples in identical order.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.signal
from tqdm import tqdm

from validate.validate_load import is_wav_path, sniff_wav_header

from . import dafx
from .audio import peak_normalize, read_wav
from .errors import (
    DataError,
    DataGenerationFailed,
    NoNonSilentAudio,
    SilentInput,
    TooShort,
)
from .types import AudioBuffer, PairedExample, ParamVector, Side, SourceKind
from .utils import derive_rng, rms_dbfs

log = logging.getLogger(__name__)

SILENCE_DBFS = -45.0
PATCH_RETRIES = 32
MAX_SEMITONES = 2.0
MANIFEST_NAME = "corpus_manifest.json"


def draw_length(patch_len: int, max_semitones: float = MAX_SEMITONES) -> int:
    """Samples drawn before augmentation so any shift can still fill patch_len.

    Examples:
      >>> draw_length(65536)
      73563
    """
    return math.ceil(patch_len * 2.0 ** (max_semitones / 12.0)) + 1


@dataclass(frozen=True)
class ManifestEntry:
    path:        str
    length:      int
    sample_rate: int


@dataclass
class Corpus:
    """Audio source for patches.

    Attributes:
      sample_rate: Working rate; directory files are resampled to it.
      patch_len: Samples per patch (two encoder segments).
      entries: Directory files, empty for the synthetic corpus.
      kinds: Synthetic generator kinds to draw from.
      silence_dbfs: RMS threshold for a usable patch.
      patch_retries: Attempts before NoNonSilentAudio.
      max_semitones: Pitch-shift range of `augment`.
    """
    sample_rate:   int
    patch_len:     int
    entries:       list[ManifestEntry] = field(default_factory=list)
    kinds:         tuple[SourceKind, ...] = tuple(SourceKind)
    silence_dbfs:  float = SILENCE_DBFS
    patch_retries: int = PATCH_RETRIES
    max_semitones: float = MAX_SEMITONES

    @property
    def synthetic(self) -> bool:
        return not self.entries

    @classmethod
    def synthetic_corpus(cls, sample_rate: int, patch_len: int,
                         kinds: Sequence[Union[str, SourceKind]] = tuple(SourceKind),
                         **kwargs) -> "Corpus":
        return cls(sample_rate, patch_len, [], tuple(SourceKind(k) for k in kinds), **kwargs)

    @classmethod
    def from_directory(cls, root: Union[str, Path], sample_rate: int, patch_len: int,
                       manifest_path: Optional[Union[str, Path]] = None, **kwargs) -> "Corpus":
        """Scan a directory tree of WAV files (cached in `manifest_path`).

        Files too short for one augmented patch are skipped with a warning.

        Raises:
          NoNonSilentAudio: No usable file was found.
        """
        entries = load_manifest(root, manifest_path)
        need = draw_length(patch_len, kwargs.get("max_semitones", MAX_SEMITONES))
        usable = []
        for entry in entries:
            resampled = entry.length * sample_rate // entry.sample_rate
            if resampled < need:
                log.warning("skipping %s: %d samples at %d Hz is shorter than %d",
                            entry.path, resampled, sample_rate, need)
                continue
            usable.append(entry)
        if not usable:
            raise NoNonSilentAudio(f"no WAV file under '{root}' is long enough for a {patch_len}-sample patch")
        log.info("corpus: %d usable files under %s", len(usable), root)
        return cls(sample_rate, patch_len, usable, **kwargs)


# ----- Corpus manifest ----------------------------------------------------

def scan_directory(root: Union[str, Path]) -> list[ManifestEntry]:
    """Header-only scan of every WAV file below `root`, sorted by path."""
    entries = []
    for path in sorted(Path(root).rglob("*")):
        if not path.is_file() or not is_wav_path(path):
            continue
        try:
            header = sniff_wav_header(path)
        except DataError as e:
            log.warning("skipping %s: %s", path, e)
            continue
        frame_bytes = header.channels * header.bits // 8
        entries.append(ManifestEntry(str(path), header.data_bytes // frame_bytes, header.sample_rate))
    return entries


def load_manifest(root: Union[str, Path], manifest_path: Optional[Union[str, Path]] = None) -> list[ManifestEntry]:
    """Read the cached manifest for `root`, or scan and write it."""
    if manifest_path is not None and Path(manifest_path).exists():
        try:
            with open(manifest_path, "r", encoding="utf-8") as f:
                doc = json.load(f)
            if doc.get("root") == str(Path(root).resolve()):
                return [ManifestEntry(**e) for e in doc["files"]]
        except (OSError, ValueError, KeyError, TypeError):
            log.warning("ignoring unreadable corpus manifest %s", manifest_path)

    entries = scan_directory(root)
    if manifest_path is not None:
        Path(manifest_path).parent.mkdir(parents=True, exist_ok=True)
        with open(manifest_path, "w", encoding="utf-8") as f:
            json.dump({
                "root": str(Path(root).resolve()),
                "files": [e.__dict__ for e in entries],
            }, f, indent=2)
        log.info("wrote corpus manifest (%d files) to %s", len(entries), manifest_path)
    return entries


@lru_cache(maxsize=64)
def _load_source(path: str, sample_rate: int) -> np.ndarray:
    return read_wav(path, sample_rate).samples


# ----- Synthetic sources --------------------------------------------------

def _harmonic(rng: np.random.Generator, n: int, rate: int) -> np.ndarray:
    """Retriggered notes: 1/k partial stacks with exponential decay."""
    out = np.zeros(n)
    t_note = rng.uniform(0.25, 1.0)
    note_len = max(1, int(t_note * rate))
    for start in range(0, n, note_len):
        stop = min(n, start + note_len)
        t = np.arange(stop - start) / rate
        f0 = rng.uniform(80.0, 400.0)
        decay = rng.uniform(1.0, 8.0)
        partials = int(min(20, (rate / 2 - 1) // f0))
        k = np.arange(1, partials + 1)[:, None]
        stack = np.sum(np.sin(2 * np.pi * f0 * k * t[None, :] + rng.uniform(0, 2 * np.pi, (partials, 1))) / k, axis=0)
        out[start:stop] = stack * np.exp(-decay * t)
    return out


def _noise_burst(rng: np.random.Generator, n: int, rate: int) -> np.ndarray:
    """White noise under a slow raised-cosine amplitude modulation."""
    mod_hz = rng.uniform(0.5, 6.0)
    t = np.arange(n) / rate
    envelope = 0.55 + 0.45 * np.cos(2 * np.pi * mod_hz * t + rng.uniform(0, 2 * np.pi))
    return rng.standard_normal(n) * envelope


def _chirp(rng: np.random.Generator, n: int, rate: int) -> np.ndarray:
    """Linear sweep from 100 Hz to 8 kHz over the whole source."""
    t = np.arange(n) / rate
    top = min(8000.0, 0.45 * rate)
    return scipy.signal.chirp(t, f0=100.0, t1=t[-1] if n > 1 else 1.0, f1=top, method="linear",
                              phi=rng.uniform(0, 360))


def _pulse_train(rng: np.random.Generator, n: int, rate: int) -> np.ndarray:
    """Glottal-style pulse train through three formant resonators."""
    f0 = rng.uniform(90.0, 250.0)
    vibrato = 1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * np.arange(n) / rate)
    phase = np.cumsum(f0 * vibrato / rate)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    out = np.zeros(n)
    for centre in (rng.uniform(300, 900), rng.uniform(900, 2500), rng.uniform(2500, 3500)):
        centre = min(centre, 0.45 * rate)
        b, a = scipy.signal.iirpeak(centre, Q=8.0, fs=rate)
        out += scipy.signal.lfilter(b, a, pulses)
    return out


_SYNTHS = {
    SourceKind.HARMONIC: _harmonic,
    SourceKind.NOISE_BURST: _noise_burst,
    SourceKind.CHIRP: _chirp,
    SourceKind.PULSE_TRAIN: _pulse_train,
}


def synth_source(rng: np.random.Generator, kind: Union[str, SourceKind], sample_rate: int,
                 length: int) -> AudioBuffer:
    """Generate a synthetic source of `length` samples with peak 0.9."""
    kind = SourceKind(kind)
    samples = _SYNTHS[kind](rng, length, sample_rate)
    peak = float(np.max(np.abs(samples))) if length else 0.0
    if peak > 0:
        samples = samples * (0.9 / peak)
    return AudioBuffer(samples, sample_rate)


# ----- Pipeline -----------------------------------------------------------

def sample_patch(corpus: Corpus, rng: np.random.Generator, length: Optional[int] = None) -> AudioBuffer:
    """A random non-silent patch of `length` samples (default patch_len).

    Synthetic sources are 2 · patch_len long; a patch is a random window of
    one. Patches with RMS at or below the silence threshold are redrawn.

    Raises:
      NoNonSilentAudio: Every retry landed on silence.
    """
    length = corpus.patch_len if length is None else length
    for _ in range(corpus.patch_retries):
        if corpus.synthetic:
            kind = corpus.kinds[int(rng.integers(len(corpus.kinds)))]
            source = synth_source(rng, kind, corpus.sample_rate, max(2 * corpus.patch_len, length)).samples
        else:
            entry = corpus.entries[int(rng.integers(len(corpus.entries)))]
            source = _load_source(entry.path, corpus.sample_rate)
        if source.shape[0] < length:
            continue
        offset = int(rng.integers(source.shape[0] - length + 1))
        patch = source[offset:offset + length]
        if rms_dbfs(patch) > corpus.silence_dbfs:
            return AudioBuffer(patch.copy(), corpus.sample_rate)
    raise NoNonSilentAudio(
        f"no patch above {corpus.silence_dbfs} dBFS RMS after {corpus.patch_retries} attempts"
    )


def augment(
        patch: AudioBuffer,
        rng: np.random.Generator,
        patch_len: int,
        max_semitones: float = MAX_SEMITONES,
        semitones: Optional[float] = None,
        offset: Optional[int] = None,
    ) -> AudioBuffer:
    """Pitch shift by resampling, then crop exactly `patch_len` samples.

    Output sample n reads the source at (offset + n) · 2^(s/12), so s > 0
    raises pitch. `semitones` and `offset` override the random draws.

    Raises:
      TooShort: The source cannot fill patch_len at this shift.
    """
    s = rng.uniform(-max_semitones, max_semitones) if semitones is None else semitones
    ratio = 2.0 ** (s / 12.0)
    available = int(math.floor((len(patch) - 1) / ratio)) + 1 if len(patch) else 0
    if available < patch_len:
        raise TooShort(f"{len(patch)} samples cannot fill {patch_len} at {s:+.2f} semitones")
    start = int(rng.integers(available - patch_len + 1)) if offset is None else offset
    positions = (start + np.arange(patch_len)) * ratio
    samples = np.interp(positions, np.arange(len(patch), dtype=np.float64), patch.samples)
    return patch.with_samples(samples)


def make_pair(
        patch: AudioBuffer,
        effect_id: str,
        rng: np.random.Generator,
        theta: Optional[ParamVector] = None,
        processor: dafx.Processor = dafx.process,
    ) -> PairedExample:
    """Build one paired example from an augmented patch.

    Only the effected half holding the global peak of the processed patch
    sits exactly at the reference level.

    Raises:
      SilentInput: The patch is silent, or the effect silenced it.
      UnknownEffect: effect_id is not registered.
    """
    theta = dafx.random_theta(effect_id, rng) if theta is None else theta
    side = Side.A if rng.random() < 0.5 else Side.B

    dry = peak_normalize(patch)
    wet = peak_normalize(processor(effect_id, dry, theta))
    dry_halves = dict(zip((Side.A, Side.B), dry.halves()))
    wet_halves = dict(zip((Side.A, Side.B), wet.halves()))
    return PairedExample(
        input_seg=dry_halves[side],
        ref_seg=wet_halves[side.other],
        truth_seg=wet_halves[side],
        theta=theta,
        side=side,
        meta={"effect_id": effect_id},
    )


def generate_example(
        corpus: Corpus,
        effect_id: str,
        seed: int,
        stream: Sequence[int],
        index: int,
        retries: int = 4,
        theta: Optional[ParamVector] = None,
    ) -> PairedExample:
    """Example `index` of stream (seed, *stream), independent of all others.

    Raises:
      DataGenerationFailed: Every attempt hit silence or a too-short source.
    """
    rng = derive_rng(seed, *stream, index)
    last: Optional[Exception] = None
    for _ in range(max(1, retries)):
        try:
            raw = sample_patch(corpus, rng, draw_length(corpus.patch_len, corpus.max_semitones))
            patch = augment(raw, rng, corpus.patch_len, corpus.max_semitones)
            example = make_pair(patch, effect_id, rng, theta=theta)
        except (SilentInput, TooShort, NoNonSilentAudio) as e:
            last = e
            continue
        example.meta["index"] = index
        return example
    raise DataGenerationFailed(f"example {index} for {effect_id} failed after {retries} attempts: {last}")


def generate_examples(
        corpus: Corpus,
        effect_id: str,
        count: int,
        seed: int,
        stream: Sequence[int] = (),
        workers: int = 1,
        retries: int = 4,
        theta: Optional[ParamVector] = None,
        progress: bool = False,
    ) -> list[PairedExample]:
    """Generate `count` examples in index order (threaded when workers > 1)."""
    dafx.get_descriptor(effect_id)

    def one(index: int) -> PairedExample:
        return generate_example(corpus, effect_id, seed, stream, index, retries, theta)

    desc = f"gen {effect_id}"
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(tqdm(pool.map(one, range(count)), total=count, desc=desc,
                             disable=not progress, leave=False))
    return [one(i) for i in tqdm(range(count), desc=desc, disable=not progress, leave=False)]
