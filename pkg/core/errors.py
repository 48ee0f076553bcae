"""Exception hierarchy for the style-matching toolkit.

Every error carries an `exit_code` so the CLI can map failures to the
documented process exit status without inspecting messages:

  2 - configuration (bad keys, unknown effect, wrong parameter count)
  3 - data (WAV parsing, silence, corpus problems, analysis preconditions)
  4 - checkpoint (version, corruption, effect mismatch)
  5 - numeric (NaN losses, shape errors inside the networks)
"""


class DafxStyleError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = 1


# ----- Configuration ------------------------------------------------------

class ConfigError(DafxStyleError):
    """Invalid configuration document or command-line override."""

    exit_code = 2


class UnknownEffect(ConfigError):
    """Effect id is not one of the registered effects."""

    def __init__(self, effect_id: str, valid: list[str]):
        super().__init__(
            f"unknown effect '{effect_id}'; valid ids: {', '.join(valid)}"
        )
        self.effect_id = effect_id
        self.valid = valid


class DimensionMismatch(ConfigError):
    """Parameter vector length does not match the effect descriptor."""


class InvalidSetting(ConfigError, ValueError):
    """A setting, parameter range or θ value is outside its allowed domain."""


# ----- Data ---------------------------------------------------------------

class DataError(DafxStyleError):
    """Problem with audio or generated data."""

    exit_code = 3


class MalformedWav(DataError):
    """RIFF/WAVE header or chunk layout could not be parsed."""


class UnsupportedFormat(DataError):
    """WAV uses a compression code or bit depth we do not read."""


class AudioIoError(DataError):
    """Underlying filesystem error while reading or writing audio."""


class InvalidAudio(DataError, ValueError):
    """Audio buffer fields violate their invariants (e.g. a non-positive rate)."""


class ReportIoError(DataError):
    """A report or metric file could not be written."""


class NonFiniteAudio(DataError):
    """Audio buffer contains NaN or Inf."""


class SilentInput(DataError):
    """Operation needs a non-silent buffer."""


class TooShort(DataError):
    """Buffer is shorter than one analysis window."""


class LengthMismatch(DataError):
    """Two signals that must be aligned have different lengths."""


class NoNonSilentAudio(DataError):
    """Corpus produced no patch above the silence threshold."""


class DataGenerationFailed(DataError):
    """Paired-example generation gave up after its retry budget."""


class SingleClass(DataError):
    """Classifier training set contains fewer than two classes."""


class DegenerateCovariance(DataError):
    """Covariance stays singular after ridge regularisation."""


# ----- Checkpoints --------------------------------------------------------

class CheckpointError(DafxStyleError):
    """Checkpoint could not be used."""

    exit_code = 4


class VersionMismatch(CheckpointError):
    """Checkpoint format version is not supported."""


class CorruptCheckpoint(CheckpointError):
    """Checkpoint is truncated, inconsistent, or fails its CRC."""


class EffectMismatch(CheckpointError):
    """Checkpoint was trained for a different effect."""


# ----- Numerics -----------------------------------------------------------

class NumericError(DafxStyleError):
    """Numerical failure inside a network or a loss."""

    exit_code = 5


class ShapeMismatch(NumericError):
    """Array shapes are incompatible for an operation."""


class NonScalarLoss(NumericError):
    """backward() was called on a non-scalar node."""


class NonFiniteLoss(NumericError):
    """A training loss became NaN or infinite."""
