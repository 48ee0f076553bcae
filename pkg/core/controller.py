"""Siamese parameter controller.

Input and reference spectrograms go through the same encoder in one stacked
batch; their mu embeddings are concatenated (2 × latent_dim = 256) and an
MLP maps them to θ̂ ∈ (0, 1)^P:

  [Linear → LayerNorm → LeakyReLU(1e-3)] × 4 (128, 128, 64, 32) → Linear → sigmoid
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ShapeMismatch
from .layers import Graph, LayerNorm, LayerParams, Linear
from .types import EncodeMode
from .vae import ENCODER, SpectroVae

CONTROLLER = "controller"


class Controller:
    """MLP head from a concatenated embedding pair to normalised parameters."""

    def __init__(
            self,
            store: LayerParams,
            in_features: int,
            num_params: int,
            hidden: Sequence[int] = (128, 128, 64, 32),
            slope: float = 1e-3,
            seed: int = 0,
        ):
        rng = np.random.default_rng(seed)
        self.in_features = in_features
        self.num_params = num_params
        self.slope = slope
        self.hidden: list[tuple[Linear, LayerNorm]] = []
        width = in_features
        for i, units in enumerate(hidden):
            self.hidden.append((
                Linear(store, f"{CONTROLLER}.fc{i}", width, units, rng),
                LayerNorm(store, f"{CONTROLLER}.ln{i}", units),
            ))
            width = units
        self.out = Linear(store, f"{CONTROLLER}.out", width, num_params, rng)

    def __call__(self, g: Graph, h: Node) -> Node:
        if h.value.ndim != 2 or h.shape[1] != self.in_features:
            raise ShapeMismatch(f"controller expects [N, {self.in_features}], got {h.shape}")
        for fc, norm in self.hidden:
            h = ad.leaky_relu(norm(g, fc(g, h)), self.slope)
        return ad.sigmoid(self.out(g, h))


class StyleMatcher:
    """Shared encoder plus controller over one parameter store.

    Args:
      input_shape: Spectrogram shape (freq_bins, frames).
      num_params: P of the target effect.
      latent_dim / channels: Encoder architecture.
      hidden / slope: Controller architecture.
      seed: Init seed for both networks.
    """

    def __init__(
            self,
            input_shape: tuple[int, int],
            num_params: int,
            latent_dim: int = 128,
            channels: Sequence[int] = (8, 16, 32, 32),
            hidden: Sequence[int] = (128, 128, 64, 32),
            slope: float = 1e-3,
            seed: int = 0,
            store: Optional[LayerParams] = None,
        ):
        self.params = store if store is not None else LayerParams()
        self.encoder = SpectroVae(
            input_shape, latent_dim, channels, seed=seed, store=self.params, with_decoder=False
        )
        self.controller = Controller(
            self.params, 2 * latent_dim, num_params, hidden, slope, seed=seed + 1
        )

    @property
    def num_params(self) -> int:
        return self.controller.num_params

    def forward(self, g: Graph, inputs: np.ndarray, refs: np.ndarray) -> Node:
        """θ̂ [B, P] for spectrogram stacks inputs/refs [B, freq_bins, frames].

        Both stacks are encoded as one batch of 2B in deterministic mode, so
        the two Siamese branches read the same parameter leaves.
        """
        if inputs.shape != refs.shape:
            raise ShapeMismatch(f"input stack {inputs.shape} vs reference stack {refs.shape}")
        batch = inputs.shape[0]
        x = g.input(np.concatenate([inputs, refs], axis=0)[:, None])
        mu = self.encoder.encode(g, x, EncodeMode.DETERMINISTIC).mu
        pair = ad.concat([mu[:batch], mu[batch:]], axis=1)
        return self.controller(g, pair)

    def predict(self, inputs: np.ndarray, refs: np.ndarray) -> np.ndarray:
        """Inference-mode θ̂ as float64, clipped to [0, 1]."""
        g = Graph(self.params, training=False, frozen=(ENCODER, CONTROLLER))
        theta = self.forward(g, inputs, refs).value.astype(np.float64)
        return np.clip(theta, 0.0, 1.0)
