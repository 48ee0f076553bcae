"""Training loops: the spectrogram β-VAE and the end-to-end style matcher.

Both loops draw fresh examples every epoch from their own rng streams and
keep the weights with the lowest validation loss. Validation sets are
generated once per run from a fixed stream, so validation losses are
comparable across epochs.

E2E step for a batch of B pairs:

  θ̂      = controller(encoder(input) ‖ encoder(ref))          [B, P]
  ŷ_b    = process(input_b, θ̂_b)
  L_b    = mrstft(ŷ_b, truth_b) + α · mae(ŷ_b, truth_b)
  G_b    = SPSA estimate of dL_b/dθ̂_b

and back-propagation runs from the surrogate Σ θ̂ ⊙ G / B.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence

import numpy as np
from tqdm import tqdm

from . import autodiff as ad
from . import dafx
from .audio import (
    fit_length,
    normalize_spectrogram,
    peak_normalize,
    stft_magnitude,
)
from .autodiff import Node
from .checkpoint import Checkpoint, require_effect, require_kind
from .config import RunConfig, config_to_dict
from .controller import StyleMatcher
from .datagen import Corpus, generate_examples
from .errors import ConfigError, NonFiniteLoss, ShapeMismatch
from .layers import Adam, Graph, clip_grad_norm
from .losses import e2e_loss, e2e_loss_with_grad, kl_weight
from .reports import MetricRow
from .spsa import effect_backward, effect_forward
from .types import AudioBuffer, EncodeMode, PairedExample, ParamVector, Split, StftConfig
from .utils import derive_rng
from .vae import ENCODER, SpectroVae, vae_loss

log = logging.getLogger(__name__)

VAE_KIND = "vae"
E2E_KIND = "e2e"

# rng stream ids; each is combined with the run seed.
STREAM_VAE_TRAIN = 11
STREAM_VAE_VAL = 12
STREAM_E2E_TRAIN = 21
STREAM_E2E_VAL = 22
STREAM_SHUFFLE = 31
STREAM_NOISE = 32
STREAM_SPSA = 33


@dataclass
class TrainResult:
    """Best-validation checkpoint plus the full metric log."""
    checkpoint: Checkpoint
    metrics:    list[MetricRow] = field(default_factory=list)
    best_epoch: int = 0
    best_val:   float = math.inf


@dataclass
class StyleMatchResult:
    theta:    ParamVector
    physical: dict[str, float]
    output:   AudioBuffer


def lr_at(progress: float, lr0: float, drop_points: Sequence[float], factor: float) -> float:
    """Step schedule: lr0 · factor^(number of drop points ≤ progress).

    Examples:
      >>> [lr_at(p, 1e-3, (0.8, 0.95), 0.1) for p in (0.79, 0.81, 0.96)]
      [0.001, 0.0001, 1e-05]
    """
    drops = bisect.bisect_right(list(drop_points), progress)
    # Round away float noise from repeated multiplication.
    return float(f"{lr0 * factor ** drops:.12g}")


def spectrogram_shape(cfg: RunConfig) -> tuple[int, int]:
    """(freq_bins, frames) of one encoder segment."""
    stft = cfg.stft.to_stft()
    return stft.freq_bins, stft.frames_for(cfg.datagen.segment_len)


def spectrograms(segments: Sequence[AudioBuffer], stft: StftConfig) -> np.ndarray:
    """Normalised spectrogram stack [N, freq_bins, frames] (float32)."""
    if not segments:
        return np.zeros((0, stft.freq_bins, 0), dtype=np.float32)
    return np.stack([
        normalize_spectrogram(stft_magnitude(seg, stft)).data for seg in segments
    ]).astype(np.float32)


def _check_finite(value: float, what: str, epoch: int, step: int) -> None:
    if not math.isfinite(value):
        raise NonFiniteLoss(f"{what} became {value} at epoch {epoch}, step {step}")


def _batches(count: int, batch_size: int, order: np.ndarray) -> list[np.ndarray]:
    return [order[i:i + batch_size] for i in range(0, count, batch_size)]


def _examples(corpus: Corpus, effect_id: str, count: int, cfg: RunConfig, stream: Sequence[int],
              progress: bool) -> list[PairedExample]:
    return generate_examples(
        corpus, effect_id, count, cfg.seed, stream,
        workers=cfg.datagen.workers, retries=cfg.datagen.example_retries, progress=progress,
    )


def _shape_metadata(cfg: RunConfig) -> dict[str, Any]:
    return {
        "input_shape": list(spectrogram_shape(cfg)),
        "latent_dim": cfg.vae.latent_dim,
        "channels": list(cfg.vae.channels),
        "sample_rate": cfg.datagen.sample_rate,
        "segment_len": cfg.datagen.segment_len,
        "stft": config_to_dict(cfg)["stft"],
    }


# ----- Spectrogram β-VAE --------------------------------------------------

def vae_validation_set(cfg: RunConfig, corpus: Corpus, progress: bool = False) -> np.ndarray:
    """Fixed validation spectrograms covering every effect of the rotation.

    Example i uses effect i mod len(effects).
    """
    effects = cfg.vae.effects
    n = cfg.vae.val_examples_per_epoch
    segments: list[Optional[AudioBuffer]] = [None] * n
    for k, effect_id in enumerate(effects):
        indices = list(range(k, n, len(effects)))
        generated = _examples(corpus, effect_id, len(indices), cfg, (STREAM_VAE_VAL, k), progress)
        for i, example in zip(indices, generated):
            segments[i] = example.truth_seg
    return spectrograms([s for s in segments if s is not None], cfg.stft.to_stft())


def _vae_validation_loss(model: SpectroVae, specs: np.ndarray, beta: float, batch_size: int) -> tuple[float, float, float]:
    """Mean (loss, recon, kl) in inference mode with z = mu."""
    totals = np.zeros(3)
    for start in range(0, specs.shape[0], batch_size):
        chunk = specs[start:start + batch_size]
        g = Graph(model.params, training=False, frozen=(ENCODER,))
        x = g.input(chunk[:, None])
        code = model.encode(g, x, EncodeMode.DETERMINISTIC)
        parts = vae_loss(model.decode(g, code.z), x, code, beta)
        totals += np.array([parts.total, parts.reconstruction, parts.kl]) * chunk.shape[0]
    return tuple(totals / max(specs.shape[0], 1))  # type: ignore[return-value]


def train_vae(cfg: RunConfig, corpus: Corpus, progress: bool = False) -> TrainResult:
    """Train the β-VAE on effected target segments.

    Epoch e trains on effect cfg.vae.effects[e mod len]. The returned
    checkpoint holds the weights with the lowest validation loss
    (recon + beta_max·kl).

    Raises:
      DataGenerationFailed: Example generation kept failing.
      NonFiniteLoss: A training loss became NaN or infinite.
    """
    vcfg = cfg.vae
    stft = cfg.stft.to_stft()
    for effect_id in vcfg.effects:
        dafx.get_descriptor(effect_id)

    model = SpectroVae(spectrogram_shape(cfg), vcfg.latent_dim, vcfg.channels, seed=cfg.seed)
    opt = Adam(model.params, vcfg.lr)
    steps_per_epoch = math.ceil(vcfg.train_examples_per_epoch / vcfg.batch_size)
    schedule = vcfg.kl
    if schedule.total_steps <= 0:
        schedule = replace(schedule, total_steps=vcfg.epochs * steps_per_epoch)

    val_specs = vae_validation_set(cfg, corpus, progress)
    result = TrainResult(Checkpoint({}))
    best_state = model.params.state()
    step = 0

    for epoch in tqdm(range(vcfg.epochs), desc="vae", disable=not progress):
        effect_id = vcfg.effects[epoch % len(vcfg.effects)]
        examples = _examples(corpus, effect_id, vcfg.train_examples_per_epoch, cfg,
                             (STREAM_VAE_TRAIN, epoch), progress)
        specs = spectrograms([e.truth_seg for e in examples], stft)
        order = derive_rng(cfg.seed, STREAM_SHUFFLE, 1, epoch).permutation(specs.shape[0])

        for idx in _batches(specs.shape[0], vcfg.batch_size, order):
            weight = kl_weight(step, schedule)
            g = Graph(model.params, training=True)
            x = g.input(specs[idx][:, None])
            code = model.encode(g, x, EncodeMode.SAMPLE, derive_rng(cfg.seed, STREAM_NOISE, step))
            parts = vae_loss(model.decode(g, code.z), x, code, weight)
            _check_finite(parts.total, "vae loss", epoch, step)
            opt.step(ad.backward(parts.node))
            result.metrics.append(MetricRow(
                epoch, step, Split.TRAIN.value, parts.total,
                recon=parts.reconstruction, kl=parts.kl, kl_weight=weight, lr=vcfg.lr,
            ))
            log.debug("vae step %d: loss %.5f recon %.5f kl %.3f w %.3f",
                      step, parts.total, parts.reconstruction, parts.kl, weight)
            step += 1

        val_loss, val_recon, val_kl = _vae_validation_loss(model, val_specs, schedule.beta_max, vcfg.batch_size)
        _check_finite(val_loss, "vae validation loss", epoch, step)
        result.metrics.append(MetricRow(
            epoch, step, Split.VAL.value, val_loss, recon=val_recon, kl=val_kl, kl_weight=schedule.beta_max,
        ))
        log.info("vae epoch %d (%s): val %.5f (recon %.5f, kl %.3f)",
                 epoch, effect_id, val_loss, val_recon, val_kl)
        if val_loss < result.best_val:
            result.best_val, result.best_epoch = val_loss, epoch
            best_state = model.params.state()

    result.checkpoint = Checkpoint(best_state, {
        "kind": VAE_KIND,
        "best_epoch": result.best_epoch,
        "best_val": result.best_val,
        "config": config_to_dict(cfg),
        "shapes": model.params.shapes(),
        **_shape_metadata(cfg),
    })
    return result


def encoder_from_checkpoint(ckpt: Checkpoint) -> SpectroVae:
    """Rebuild an inference-only encoder from a VAE or E2E checkpoint."""
    meta = ckpt.metadata
    model = SpectroVae(tuple(meta["input_shape"]), meta["latent_dim"], meta["channels"], with_decoder=False)
    model.params.load_state({k: v for k, v in ckpt.arrays.items() if k.startswith(ENCODER + ".")})
    return model


# ----- End-to-end style matching ------------------------------------------

def matcher_from_checkpoint(ckpt: Checkpoint) -> StyleMatcher:
    """Rebuild a StyleMatcher from an E2E checkpoint.

    Raises:
      CorruptCheckpoint: Not an E2E checkpoint.
      ShapeMismatch: Stored arrays do not fit the recorded architecture.
    """
    require_kind(ckpt, E2E_KIND)
    meta = ckpt.metadata
    model = StyleMatcher(
        tuple(meta["input_shape"]), meta["num_params"], meta["latent_dim"], meta["channels"],
        meta["controller_hidden"], meta["leaky_slope"],
    )
    model.params.load_state(ckpt.arrays)
    return model


def _matcher_for(cfg: RunConfig, num_params: int) -> StyleMatcher:
    return StyleMatcher(
        spectrogram_shape(cfg), num_params, cfg.vae.latent_dim, cfg.vae.channels,
        cfg.e2e.controller_hidden, cfg.e2e.leaky_slope, seed=cfg.seed,
    )


def _render(effect_id: str, example: PairedExample, theta: np.ndarray) -> AudioBuffer:
    return dafx.process(effect_id, example.input_seg, ParamVector(effect_id, theta))


def _e2e_validation_loss(model: StyleMatcher, effect_id: str, examples: Sequence[PairedExample],
                         in_specs: np.ndarray, ref_specs: np.ndarray, cfg: RunConfig) -> tuple[float, float, float]:
    totals = np.zeros(3)
    bs = cfg.e2e.batch_size
    for start in range(0, len(examples), bs):
        thetas = model.predict(in_specs[start:start + bs], ref_specs[start:start + bs])
        for example, theta in zip(examples[start:start + bs], thetas):
            parts = e2e_loss(_render(effect_id, example, theta), example.truth_seg, cfg.e2e.alpha, cfg.mrstft)
            totals += parts
    return tuple(totals / max(len(examples), 1))  # type: ignore[return-value]


def train_e2e(
        cfg: RunConfig,
        effect_id: str,
        corpus: Corpus,
        encoder: Optional[Checkpoint] = None,
        progress: bool = False,
    ) -> TrainResult:
    """Train the Siamese controller (and optionally the encoder) for one effect.

    With `cfg.e2e.freeze_encoder` the encoder arrays are never touched and
    only the controller learns; otherwise the whole network trains with
    gradient clipping.

    Raises:
      UnknownEffect: effect_id is not registered.
      ConfigError: A frozen encoder was requested without a checkpoint.
      ShapeMismatch: The encoder checkpoint does not fit the configuration.
      DataGenerationFailed / NonFiniteLoss: As for `train_vae`.
    """
    ecfg = cfg.e2e
    descriptor = dafx.get_descriptor(effect_id)
    stft = cfg.stft.to_stft()
    if ecfg.freeze_encoder and encoder is None:
        raise ConfigError("a frozen encoder needs a pre-trained encoder checkpoint (--encoder)")

    model = _matcher_for(cfg, descriptor.num_params)
    if encoder is not None:
        require_kind(encoder, VAE_KIND)
        wanted = set(model.params.names(ENCODER + "."))
        missing = sorted(wanted - set(encoder.arrays))
        if missing:
            raise ShapeMismatch(f"encoder checkpoint lacks {missing}")
        model.params.load_state({k: encoder.arrays[k] for k in wanted}, strict=False)
        log.info("loaded encoder weights (%d arrays)", len(wanted))

    frozen = (ENCODER,) if ecfg.freeze_encoder else ()
    lr0 = ecfg.effective_lr
    opt = Adam(model.params, lr0)
    steps_per_epoch = math.ceil(ecfg.train_examples_per_epoch / ecfg.batch_size)
    total_steps = ecfg.epochs * steps_per_epoch

    val_examples = _examples(corpus, effect_id, ecfg.val_examples_per_epoch, cfg, (STREAM_E2E_VAL,), progress)
    val_in = spectrograms([e.input_seg for e in val_examples], stft)
    val_ref = spectrograms([e.ref_seg for e in val_examples], stft)

    result = TrainResult(Checkpoint({}))
    best_state = model.params.state()
    step = 0
    log.info("e2e %s: %d steps, lr %.1e, encoder %s",
             effect_id, total_steps, lr0, "frozen" if ecfg.freeze_encoder else "trainable")

    for epoch in tqdm(range(ecfg.epochs), desc=f"e2e {effect_id}", disable=not progress):
        examples = _examples(corpus, effect_id, ecfg.train_examples_per_epoch, cfg,
                             (STREAM_E2E_TRAIN, epoch), progress)
        in_specs = spectrograms([e.input_seg for e in examples], stft)
        ref_specs = spectrograms([e.ref_seg for e in examples], stft)
        order = derive_rng(cfg.seed, STREAM_SHUFFLE, 2, epoch).permutation(len(examples))

        for idx in _batches(len(examples), ecfg.batch_size, order):
            lr = lr_at(step / total_steps, lr0, ecfg.lr_drop_points, ecfg.lr_drop_factor)
            g = Graph(model.params, training=True, frozen=frozen)
            theta_hat = model.forward(g, in_specs[idx], ref_specs[idx])
            thetas = np.clip(theta_hat.value.astype(np.float64), 0.0, 1.0)

            spsa_rng = derive_rng(cfg.seed, STREAM_SPSA, step)
            upstream = np.zeros_like(thetas)
            totals = np.zeros(3)
            for b, i in enumerate(idx):
                example = examples[i]
                pred, ctx = effect_forward(effect_id, example.input_seg, ParamVector(effect_id, thetas[b]))
                parts, grad = e2e_loss_with_grad(pred, example.truth_seg, ecfg.alpha, cfg.mrstft)
                upstream[b] = effect_backward(grad, ctx, cfg.spsa, spsa_rng) / len(idx)
                totals += parts
            loss, spectral, mae = totals / len(idx)
            _check_finite(loss, "e2e loss", epoch, step)

            surrogate = ad.sum(theta_hat * Node.const(upstream.astype(theta_hat.dtype)))
            grads = ad.backward(surrogate)
            if not ecfg.freeze_encoder:
                clip_grad_norm(grads, ecfg.grad_clip)
            opt.step(grads, lr=lr)
            result.metrics.append(MetricRow(epoch, step, Split.TRAIN.value, loss, mrstft=spectral, mae=mae, lr=lr))
            log.debug("e2e step %d: loss %.5f mrstft %.5f mae %.6f lr %.1e", step, loss, spectral, mae, lr)
            step += 1

        val_loss, val_mrstft, val_mae = _e2e_validation_loss(model, effect_id, val_examples, val_in, val_ref, cfg)
        _check_finite(val_loss, "e2e validation loss", epoch, step)
        result.metrics.append(MetricRow(epoch, step, Split.VAL.value, val_loss, mrstft=val_mrstft, mae=val_mae))
        log.info("e2e epoch %d: val %.5f (mrstft %.5f, mae %.6f)", epoch, val_loss, val_mrstft, val_mae)
        if val_loss < result.best_val:
            result.best_val, result.best_epoch = val_loss, epoch
            best_state = model.params.state()

    result.checkpoint = Checkpoint(best_state, {
        "kind": E2E_KIND,
        "effect_id": effect_id,
        "num_params": descriptor.num_params,
        "controller_hidden": list(ecfg.controller_hidden),
        "leaky_slope": ecfg.leaky_slope,
        "freeze_encoder": ecfg.freeze_encoder,
        "best_epoch": result.best_epoch,
        "best_val": result.best_val,
        "config": config_to_dict(cfg),
        "shapes": model.params.shapes(),
        **_shape_metadata(cfg),
    })
    return result


# ----- Inference ----------------------------------------------------------

def style_match(input_audio: AudioBuffer, ref_audio: AudioBuffer, effect_id: str, ckpt: Checkpoint) -> StyleMatchResult:
    """Estimate θ̂ so `input_audio` takes on the effect heard in `ref_audio`.

    Both signals are peak-normalised to the reference level and their first
    segment (zero-padded when shorter) is embedded. The whole normalised
    input is then processed with θ̂.

    Raises:
      EffectMismatch: The checkpoint was trained for another effect.
      SilentInput: Either signal is silent.
    """
    require_kind(ckpt, E2E_KIND)
    require_effect(ckpt, effect_id)
    meta = ckpt.metadata
    model = matcher_from_checkpoint(ckpt)
    stft = StftConfig(**{k: meta["stft"][k] for k in ("fft_bins", "window_len", "hop_len", "compression_exponent")})
    segment_len = meta["segment_len"]

    dry = peak_normalize(input_audio)
    ref = peak_normalize(ref_audio)
    in_spec = spectrograms([fit_length(dry, segment_len)], stft)
    ref_spec = spectrograms([fit_length(ref, segment_len)], stft)
    theta = ParamVector(effect_id, model.predict(in_spec, ref_spec)[0])

    output = dafx.process(effect_id, dry, theta)
    physical = dafx.physical_params(dafx.get_descriptor(effect_id), theta)
    log.info("style-match %s: theta %s", effect_id, np.round(theta.values, 4).tolist())
    return StyleMatchResult(theta, physical, output)
