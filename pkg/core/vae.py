"""Spectrogram β-VAE.

Encoder: 4 × [conv k3/s2/p1 → batch norm → ReLU] over channels
1 → 8 → 16 → 32 → 32, flatten, then two linear heads for mu and log_var.
Decoder: linear → unflatten → 3 × [transposed conv → batch norm → ReLU]
→ transposed conv to 1 channel → sigmoid, each layer cropped/padded back to
the matching encoder input shape.

Inputs are batches shaped [N, 1, freq_bins, frames].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ShapeMismatch
from .layers import BatchNorm2d, Conv2d, ConvTranspose2d, Graph, LayerParams, Linear
from .types import EncodeMode


ENCODER = "encoder"
DECODER = "decoder"


@dataclass
class LatentCode:
    """Posterior parameters and latent sample, each [N, latent_dim]."""
    mu:      Node
    log_var: Node
    z:       Node


@dataclass
class VaeLossParts:
    """Loss breakdown; total = reconstruction + kl_weight·kl."""
    reconstruction: float
    kl:             float
    kl_weight:      float
    total:          float
    node:           Optional[Node] = field(default=None, repr=False)


def encoder_shapes(input_shape: tuple[int, int], layers: int) -> list[tuple[int, int]]:
    """Spatial shape entering each conv layer, plus the final output shape.

    Examples:
      >>> encoder_shapes((513, 127), 4)
      [(513, 127), (257, 64), (129, 32), (65, 16), (33, 8)]
    """
    shapes = [tuple(input_shape)]
    for _ in range(layers):
        h, w = shapes[-1]
        shapes.append((ad.conv_output_size(h), ad.conv_output_size(w)))
    return shapes  # type: ignore[return-value]


class SpectroVae:
    """β-VAE over normalised spectrograms.

    Args:
      input_shape: (freq_bins, frames) of one spectrogram.
      latent_dim: Size of mu / log_var / z.
      channels: Conv channel progression after the single input channel.
      seed: Weight-init seed.
      store: Shared parameter store (created when None).
      with_decoder: Skip the decoder when only embeddings are needed.
    """

    def __init__(
            self,
            input_shape: tuple[int, int],
            latent_dim: int = 128,
            channels: Sequence[int] = (8, 16, 32, 32),
            seed: int = 0,
            store: Optional[LayerParams] = None,
            with_decoder: bool = True,
        ):
        self.input_shape = tuple(input_shape)
        self.latent_dim = latent_dim
        self.channels = tuple(channels)
        self.params = store if store is not None else LayerParams()
        self.with_decoder = with_decoder

        rng = np.random.default_rng(seed)
        self.shapes = encoder_shapes(self.input_shape, len(self.channels))
        bottom_h, bottom_w = self.shapes[-1]
        self.flat_len = self.channels[-1] * bottom_h * bottom_w

        c_in = 1
        self.convs: list[Conv2d] = []
        self.enc_norms: list[BatchNorm2d] = []
        for i, c_out in enumerate(self.channels):
            self.convs.append(Conv2d(self.params, f"{ENCODER}.conv{i}", c_in, c_out, rng))
            self.enc_norms.append(BatchNorm2d(self.params, f"{ENCODER}.bn{i}", c_out))
            c_in = c_out
        self.mu_head = Linear(self.params, f"{ENCODER}.mu", self.flat_len, latent_dim, rng)
        self.log_var_head = Linear(self.params, f"{ENCODER}.log_var", self.flat_len, latent_dim, rng)

        self.deconvs: list[ConvTranspose2d] = []
        self.dec_norms: list[BatchNorm2d] = []
        if with_decoder:
            self.fc = Linear(self.params, f"{DECODER}.fc", latent_dim, self.flat_len, rng)
            mirrored = list(reversed(self.channels)) + [1]
            for i, (a, b) in enumerate(zip(mirrored, mirrored[1:])):
                self.deconvs.append(ConvTranspose2d(self.params, f"{DECODER}.deconv{i}", a, b, rng))
                if i < len(mirrored) - 2:
                    self.dec_norms.append(BatchNorm2d(self.params, f"{DECODER}.bn{i}", b))

    def _check_input(self, x: Node) -> None:
        if x.value.ndim != 4 or x.shape[1] != 1 or tuple(x.shape[2:]) != self.input_shape:
            raise ShapeMismatch(
                f"encoder expects [N, 1, {self.input_shape[0]}, {self.input_shape[1]}], got {x.shape}"
            )

    def encode(
            self,
            g: Graph,
            x: Node,
            mode: EncodeMode = EncodeMode.SAMPLE,
            rng: Optional[np.random.Generator] = None,
        ) -> LatentCode:
        """Run the encoder.

        In SAMPLE mode z = mu + exp(0.5·log_var)·ε with ε drawn from `rng`;
        in DETERMINISTIC mode z = mu.

        Raises:
          ShapeMismatch: Input is not [N, 1, freq_bins, frames].
        """
        self._check_input(x)
        h = x
        for conv, norm in zip(self.convs, self.enc_norms):
            h = ad.relu(norm(g, conv(g, h)))
        h = ad.flatten(h)
        mu = self.mu_head(g, h)
        log_var = self.log_var_head(g, h)
        if mode is EncodeMode.DETERMINISTIC:
            return LatentCode(mu, log_var, mu)
        if rng is None:
            raise ValueError("sampling mode needs an rng")
        eps = rng.standard_normal(mu.shape).astype(mu.dtype)
        z = mu + ad.exp(log_var * 0.5) * eps
        return LatentCode(mu, log_var, z)

    def decode(self, g: Graph, z: Node) -> Node:
        """Map latents [N, latent_dim] to spectrograms [N, 1, freq_bins, frames] in [0, 1].

        Raises:
          ShapeMismatch: Wrong latent width, or the model has no decoder.
        """
        if not self.with_decoder:
            raise ShapeMismatch("this model was built without a decoder")
        if z.value.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeMismatch(f"decoder expects [N, {self.latent_dim}], got {z.shape}")
        bottom_h, bottom_w = self.shapes[-1]
        h = ad.reshape(self.fc(g, z), (z.shape[0], self.channels[-1], bottom_h, bottom_w))
        targets = list(reversed(self.shapes[:-1]))
        for i, deconv in enumerate(self.deconvs):
            h = deconv(g, h, targets[i])
            if i < len(self.dec_norms):
                h = ad.relu(self.dec_norms[i](g, h))
        return ad.sigmoid(h)

    def embed(self, specs: np.ndarray, batch_size: int = 32) -> np.ndarray:
        """Deterministic mu for a stack of spectrograms [N, freq_bins, frames].

        Runs in inference mode without building gradients.
        """
        specs = np.asarray(specs)
        out = np.zeros((specs.shape[0], self.latent_dim), dtype=np.float64)
        for start in range(0, specs.shape[0], batch_size):
            g = Graph(self.params, training=False, frozen=(ENCODER,))
            x = g.input(specs[start:start + batch_size, None])
            out[start:start + batch_size] = self.encode(g, x, EncodeMode.DETERMINISTIC).mu.value
        return out


def kl_divergence(code: LatentCode) -> Node:
    """−0.5 · mean over batch of Σ_d (1 + log_var − mu² − exp(log_var))."""
    mu, log_var = code.mu, code.log_var
    inner = 1.0 + log_var - ad.square(mu) - ad.exp(log_var)
    return ad.sum(inner) * (-0.5 / mu.shape[0])


def vae_loss(recon: Node, target: Node, code: LatentCode, kl_weight: float) -> VaeLossParts:
    """Reconstruction MSE plus weighted KL.

    Raises:
      ShapeMismatch: recon and target shapes differ.
    """
    if recon.shape != target.shape:
        raise ShapeMismatch(f"vae_loss: recon {recon.shape} vs target {target.shape}")
    rec = ad.mse(recon, target)
    kl = kl_divergence(code)
    total = rec + kl * kl_weight
    return VaeLossParts(
        reconstruction=rec.item(),
        kl=kl.item(),
        kl_weight=float(kl_weight),
        total=total.item(),
        node=total,
    )
