"""Run configuration: nested dataclasses loaded from JSON presets.

A config document mirrors `RunConfig` field by field. Missing keys take the
desk defaults below; unknown keys are rejected with the dotted key in the
message. Command-line overrides use the same dotted keys
(`--set e2e.lr=1e-4`).
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin, get_type_hints

from .errors import ConfigError
from .types import StftConfig

log = logging.getLogger(__name__)

CONFIG_VERSION = 1

PRESET_DIR = Path(__file__).resolve().parent.parent / "configs"
PRESETS = ("desk", "paper")

TRAINING_EFFECT_ROTATION = ("ambience", "combo", "delay", "dynamics", "overdrive", "ringmod")


@dataclass
class StftSettings:
    """Spectrogram front-end of the encoder."""
    fft_bins:             int = 1024
    window_len:           int = 512
    hop_len:              int = 256
    compression_exponent: float = 0.3

    def to_stft(self) -> StftConfig:
        try:
            return StftConfig(self.fft_bins, self.window_len, self.hop_len, self.compression_exponent)
        except ValueError as e:
            raise ConfigError(f"stft: {e}") from e


@dataclass
class DatagenSettings:
    """Paired-example generation.

    `segment_len` is one encoder input; patches are two segments long.
    """
    sample_rate:     int = 24000
    segment_len:     int = 32768
    silence_dbfs:    float = -45.0
    max_semitones:   float = 2.0
    patch_retries:   int = 32
    example_retries: int = 4
    workers:         int = 1
    synth_kinds:     tuple[str, ...] = ("harmonic", "noise_burst", "chirp", "pulse_train")

    @property
    def patch_len(self) -> int:
        return 2 * self.segment_len


@dataclass
class KlScheduleConfig:
    """Cyclic KL annealing; total_steps = 0 means "derive from the run"."""
    num_cycles:     int = 4
    ramp_fraction:  float = 0.5
    beta_max:       float = 1.0
    total_steps:    int = 0


@dataclass
class VaeTrainConfig:
    lr:                       float = 5e-4
    epochs:                   int = 6
    train_examples_per_epoch: int = 96
    val_examples_per_epoch:   int = 16
    batch_size:               int = 8
    effects:                  tuple[str, ...] = TRAINING_EFFECT_ROTATION
    latent_dim:               int = 128
    channels:                 tuple[int, ...] = (8, 16, 32, 32)
    kl:                       KlScheduleConfig = field(default_factory=KlScheduleConfig)


@dataclass
class SpsaConfig:
    """Gradient estimation across the effect boundary."""
    epsilon:   float = 1e-2
    num_draws: int = 1

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ConfigError("spsa.epsilon must be > 0")
        if self.num_draws < 1:
            raise ConfigError("spsa.num_draws must be >= 1")


@dataclass
class MrstftConfig:
    """Resolutions of the multi-resolution STFT loss (window = fft, hop = fft/4)."""
    fft_sizes: tuple[int, ...] = (32, 128, 512, 2048, 8192, 32768)


@dataclass
class E2eTrainConfig:
    """End-to-end training.

    `lr` = None resolves to 1e-3 with a frozen encoder and to
    `unfrozen_lr` (3e-5) when the encoder trains too.
    """
    lr:                       Optional[float] = None
    frozen_lr:                float = 1e-3
    unfrozen_lr:              float = 3e-5
    epochs:                   int = 8
    train_examples_per_epoch: int = 128
    val_examples_per_epoch:   int = 32
    batch_size:               int = 8
    alpha:                    float = 100.0
    freeze_encoder:           bool = True
    lr_drop_points:           tuple[float, ...] = (0.8, 0.95)
    lr_drop_factor:           float = 0.1
    grad_clip:                float = 5.0
    controller_hidden:        tuple[int, ...] = (128, 128, 64, 32)
    leaky_slope:              float = 1e-3

    @property
    def effective_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return self.frozen_lr if self.freeze_encoder else self.unfrozen_lr


@dataclass
class AnalysisSettings:
    classifier_examples_per_effect: int = 200
    test_fraction:                  float = 0.15
    pca_components:                 int = 128
    rf_trees:                       int = 100
    rf_max_depth:                   int = 16
    mi_bins:                        int = 32
    mmi_examples:                   int = 1000
    cca_components:                 int = 2
    cca_ridge:                      float = 1e-6
    eval_examples:                  int = 200


@dataclass
class RunConfig:
    """Root configuration document."""
    version:  int = CONFIG_VERSION
    preset:   str = "desk"
    seed:     int = 0
    corpus:   Optional[str] = None
    run_dir:  str = "runs/latest"
    stft:     StftSettings = field(default_factory=StftSettings)
    datagen:  DatagenSettings = field(default_factory=DatagenSettings)
    vae:      VaeTrainConfig = field(default_factory=VaeTrainConfig)
    e2e:      E2eTrainConfig = field(default_factory=E2eTrainConfig)
    spsa:     SpsaConfig = field(default_factory=SpsaConfig)
    mrstft:   MrstftConfig = field(default_factory=MrstftConfig)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)

    def validate(self) -> "RunConfig":
        """Check cross-field constraints; return self.

        Raises:
          ConfigError: The first violated constraint.
        """
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"config version {self.version} is not supported (expected {CONFIG_VERSION})")
        stft = self.stft.to_stft()
        if self.datagen.segment_len < stft.window_len:
            raise ConfigError("datagen.segment_len must be at least stft.window_len")
        if self.datagen.sample_rate <= 0:
            raise ConfigError("datagen.sample_rate must be positive")
        for name, lr in (("vae.lr", self.vae.lr), ("e2e.lr", self.e2e.effective_lr)):
            if not lr > 0:
                raise ConfigError(f"{name} must be > 0")
        for name, epochs in (("vae.epochs", self.vae.epochs), ("e2e.epochs", self.e2e.epochs)):
            if epochs < 1:
                raise ConfigError(f"{name} must be >= 1")
        drops = list(self.e2e.lr_drop_points)
        if any(not 0 < d < 1 for d in drops) or any(b <= a for a, b in zip(drops, drops[1:])):
            raise ConfigError("e2e.lr_drop_points must be strictly increasing in (0, 1)")
        if self.vae.kl.num_cycles < 1:
            raise ConfigError("vae.kl.num_cycles must be >= 1")
        if not 0 < self.vae.kl.ramp_fraction <= 1:
            raise ConfigError("vae.kl.ramp_fraction must lie in (0, 1]")
        if not self.vae.effects:
            raise ConfigError("vae.effects must not be empty")
        if len(self.vae.channels) < 1:
            raise ConfigError("vae.channels must not be empty")
        if not self.mrstft.fft_sizes:
            raise ConfigError("mrstft.fft_sizes must not be empty")
        if not 0 < self.analysis.test_fraction < 1:
            raise ConfigError("analysis.test_fraction must lie in (0, 1)")
        return self


# ----- Loading ------------------------------------------------------------

def _coerce(value: Any, hint: Any, key: str) -> Any:
    """Convert a JSON value to the annotated field type."""
    origin = get_origin(hint)
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"'{key}' must be an object")
        return _build(hint, value, key)
    if origin is Union:
        args = [a for a in get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], key)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"'{key}' must be a list")
        item = get_args(hint)[0]
        return tuple(_coerce(v, item, f"{key}[{i}]") for i, v in enumerate(value))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"'{key}' must be true or false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{key}' must be an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{key}' must be a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"'{key}' must be a string")
        return value
    return value


def _build(cls: type, data: dict, prefix: str = "") -> Any:
    hints = get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key '{prefix + '.' if prefix else ''}{key}'")
    kwargs = {
        name: _coerce(value, hints[name], f"{prefix + '.' if prefix else ''}{name}")
        for name, value in data.items()
    }
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from a (possibly partial) document."""
    if not isinstance(data, dict):
        raise ConfigError("config document must be a JSON object")
    return _build(RunConfig, data)


def config_to_dict(cfg: RunConfig) -> dict:
    """JSON-ready dict (tuples become lists)."""
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _read_json(path: Union[str, Path]) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file '{path}' does not exist") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file '{path}' is not valid JSON: {e}") from e


def preset_document(name: str) -> dict:
    """Raw JSON of a shipped preset."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'; valid presets: {', '.join(PRESETS)}")
    return _read_json(PRESET_DIR / f"{name}.json")


def parse_override(item: str) -> tuple[list[str], Any]:
    """Split 'a.b=value' into (['a', 'b'], parsed value).

    Values are parsed as JSON when possible, otherwise kept as strings.

    Examples:
      >>> parse_override("e2e.lr=1e-4")
      (['e2e', 'lr'], 0.0001)
      >>> parse_override("corpus=data/wavs")
      (['corpus'], 'data/wavs')
    """
    if "=" not in item:
        raise ConfigError(f"override '{item}' must look like key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def _nest(path: list[str], value: Any) -> dict:
    doc: Any = value
    for part in reversed(path):
        doc = {part: doc}
    return doc


def load_config(
        path: Optional[Union[str, Path]] = None,
        preset: Optional[str] = None,
        overrides: Optional[list[str]] = None,
    ) -> RunConfig:
    """Resolve preset → file → overrides into a validated RunConfig.

    Raises:
      ConfigError: Unknown keys, wrong types, bad values or unreadable files.
    """
    doc: dict = {}
    if preset is not None:
        doc = _merge(doc, preset_document(preset))
    if path is not None:
        doc = _merge(doc, _read_json(path))
    for item in overrides or []:
        keys, value = parse_override(item)
        doc = _merge(doc, _nest(keys, value))
    cfg = config_from_dict(doc)
    log.debug("resolved config: preset=%s seed=%d", cfg.preset, cfg.seed)
    return cfg.validate()


def save_config(cfg: RunConfig, path: Union[str, Path]) -> None:
    """Echo the resolved config as pretty JSON."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(cfg), f, indent=2)
        f.write("\n")


DEFAULT_CONFIG = RunConfig()
