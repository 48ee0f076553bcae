"""Parameter store, layer modules and the Adam optimizer.

Parameters live in one `LayerParams` store keyed by dotted names
("encoder.conv0.weight"). Modules only remember their names; every forward
pass runs inside a `Graph`, which turns each stored array into one leaf node
so that two uses of a module in the same pass share a single leaf (the
Siamese encoder reads identical storage for input and reference).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ShapeMismatch


class LayerParams:
    """Named arrays: weights, biases, norm scales/shifts, running statistics.

    Names are unique and shapes are fixed once added. Running statistics are
    stored but never trained.
    """

    def __init__(self, dtype: np.dtype = np.float32):
        self.dtype = np.dtype(dtype)
        self._arrays: Dict[str, np.ndarray] = {}
        self._trainable: Dict[str, bool] = {}

    def add(self, name: str, array: np.ndarray, trainable: bool = True) -> None:
        if name in self._arrays:
            raise ValueError(f"duplicate parameter name '{name}'")
        self._arrays[name] = np.ascontiguousarray(array, dtype=self.dtype)
        self._trainable[name] = trainable

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def names(self, prefix: str = "") -> list[str]:
        """Parameter names in insertion order, optionally filtered by prefix."""
        return [n for n in self._arrays if n.startswith(prefix)]

    def state(self, prefix: str = "") -> Dict[str, np.ndarray]:
        """Copies of all arrays (optionally under `prefix`)."""
        return {n: a.copy() for n, a in self._arrays.items() if n.startswith(prefix)}

    def load_state(self, arrays: Dict[str, np.ndarray], strict: bool = True) -> None:
        """Overwrite stored arrays in place.

        Raises:
          ShapeMismatch: A shape differs, or (strict) a stored name is missing
            from `arrays` / `arrays` holds an unknown name.
        """
        if strict:
            missing = sorted(set(self._arrays) - set(arrays))
            unknown = sorted(set(arrays) - set(self._arrays))
            if missing or unknown:
                raise ShapeMismatch(f"parameter sets differ: missing {missing}, unknown {unknown}")
        for name, value in arrays.items():
            if name not in self._arrays:
                continue
            if self._arrays[name].shape != tuple(value.shape):
                raise ShapeMismatch(
                    f"{name}: stored shape {self._arrays[name].shape} vs loaded {tuple(value.shape)}"
                )
            self._arrays[name][...] = value

    def astype(self, dtype: np.dtype) -> None:
        """Convert every array in place (float64 for gradient checks)."""
        self.dtype = np.dtype(dtype)
        for name in self._arrays:
            self._arrays[name] = self._arrays[name].astype(self.dtype)

    def shapes(self) -> Dict[str, list[int]]:
        return {n: list(a.shape) for n, a in self._arrays.items()}


@dataclass
class Graph:
    """Context of one forward pass.

    Attributes:
      params: The parameter store.
      training: Batch-norm mode (batch statistics and running-stat updates).
      frozen: Name prefixes whose parameters get no gradient.
    """
    params:   LayerParams
    training: bool = True
    frozen:   tuple[str, ...] = ()
    _leaves:  Dict[str, Node] = field(default_factory=dict, repr=False)

    def param(self, name: str) -> Node:
        """Leaf node for a stored parameter (one per name per pass)."""
        node = self._leaves.get(name)
        if node is None:
            requires = self.params.is_trainable(name) and not name.startswith(self.frozen)
            node = Node.leaf(self.params[name], name, requires_grad=requires)
            self._leaves[name] = node
        return node

    def input(self, array: np.ndarray) -> Node:
        """Constant input cast to the store dtype."""
        return Node.const(np.asarray(array, dtype=self.params.dtype))


def kaiming_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    """U(-b, b) with b = sqrt(6 / fan_in)."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))


class Module:
    """Base class: a name prefix into a shared store."""

    def __init__(self, store: LayerParams, name: str):
        self.store = store
        self.name = name

    def _add(self, suffix: str, array: np.ndarray, trainable: bool = True) -> None:
        self.store.add(f"{self.name}.{suffix}", array, trainable)

    def _p(self, g: Graph, suffix: str) -> Node:
        return g.param(f"{self.name}.{suffix}")


class Linear(Module):
    """y = x·Wᵀ + b with W [out, in]."""

    def __init__(self, store: LayerParams, name: str, in_features: int, out_features: int,
                 rng: np.random.Generator):
        super().__init__(store, name)
        self.in_features = in_features
        self.out_features = out_features
        self._add("weight", kaiming_uniform(rng, (out_features, in_features), in_features))
        self._add("bias", np.zeros(out_features))

    def __call__(self, g: Graph, x: Node) -> Node:
        return ad.linear(x, self._p(g, "weight"), self._p(g, "bias"))


class Conv2d(Module):
    """Strided 2-D convolution (default k=3, s=2, p=1)."""

    def __init__(self, store: LayerParams, name: str, in_channels: int, out_channels: int,
                 rng: np.random.Generator, kernel: int = 3, stride: int = 2, padding: int = 1):
        super().__init__(store, name)
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        self._add("weight", kaiming_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in))
        self._add("bias", np.zeros(out_channels))

    def __call__(self, g: Graph, x: Node) -> Node:
        return ad.conv2d(x, self._p(g, "weight"), self._p(g, "bias"), self.stride, self.padding)


class ConvTranspose2d(Module):
    """Transposed convolution mirroring `Conv2d`; weight [in, out, k, k]."""

    def __init__(self, store: LayerParams, name: str, in_channels: int, out_channels: int,
                 rng: np.random.Generator, kernel: int = 3, stride: int = 2, padding: int = 1):
        super().__init__(store, name)
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        self._add("weight", kaiming_uniform(rng, (in_channels, out_channels, kernel, kernel), fan_in))
        self._add("bias", np.zeros(out_channels))

    def __call__(self, g: Graph, x: Node, target_shape: tuple[int, int]) -> Node:
        return ad.conv_transpose2d(
            x, self._p(g, "weight"), self._p(g, "bias"), target_shape, self.stride, self.padding
        )


class BatchNorm2d(Module):
    """Per-channel batch norm with affine scale/shift and running statistics."""

    def __init__(self, store: LayerParams, name: str, channels: int,
                 momentum: float = 0.1, eps: float = 1e-5):
        super().__init__(store, name)
        self.momentum = momentum
        self.eps = eps
        self._add("weight", np.ones(channels))
        self._add("bias", np.zeros(channels))
        self._add("running_mean", np.zeros(channels), trainable=False)
        self._add("running_var", np.ones(channels), trainable=False)

    def __call__(self, g: Graph, x: Node) -> Node:
        # Frozen layers always run on their running statistics.
        training = g.training and not self.name.startswith(g.frozen)
        return ad.batch_norm2d(
            x,
            self._p(g, "weight"),
            self._p(g, "bias"),
            self.store[f"{self.name}.running_mean"],
            self.store[f"{self.name}.running_var"],
            training=training,
            momentum=self.momentum,
            eps=self.eps,
        )


class LayerNorm(Module):
    """Normalisation over the feature axis."""

    def __init__(self, store: LayerParams, name: str, features: int, eps: float = 1e-5):
        super().__init__(store, name)
        self.eps = eps
        self._add("weight", np.ones(features))
        self._add("bias", np.zeros(features))

    def __call__(self, g: Graph, x: Node) -> Node:
        return ad.layer_norm(x, self._p(g, "weight"), self._p(g, "bias"), self.eps)


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return math.sqrt(float(np.sum([np.sum(np.square(g, dtype=np.float64)) for g in grads.values()])))


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is ≤ max_norm.

    Returns:
      The norm before clipping.
    """
    total = global_norm(grads)
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-6)
        for name in grads:
            grads[name] = grads[name] * scale
    return total


class Adam:
    """Adam optimizer updating a `LayerParams` store in place.

    Only names present in the gradient map are touched, so frozen parameters
    stay bit-identical.
    """

    def __init__(self, store: LayerParams, lr: float, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def step(self, grads: Dict[str, np.ndarray], lr: Optional[float] = None) -> None:
        if lr is not None:
            self.lr = lr
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name in sorted(grads):
            if not self.store.is_trainable(name):
                continue
            g = grads[name].astype(self.store.dtype, copy=False)
            m = self._m.setdefault(name, np.zeros_like(g))
            v = self._v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            self.store[name][...] -= update.astype(self.store.dtype)
