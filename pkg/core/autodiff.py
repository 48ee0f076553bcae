"""Reverse-mode automatic differentiation over numpy arrays.

A `Node` wraps a value array and, when any input requires a gradient, the
closure that maps the node's gradient to gradients of its parents. Graphs
are rebuilt on every forward pass; parameters enter as named leaves and
`backward` returns a {name: gradient} map.

Primitive ops keep the dtype of their inputs: training runs in float32 and
`gradient_check` switches everything to float64.

Shapes used by the image ops:
  - conv2d:            x [N, C_in, H, W], w [C_out, C_in, k, k]
  - conv_transpose2d:  x [N, C_in, H, W], w [C_in, C_out, k, k]
"""

from __future__ import annotations

from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import NonScalarLoss, ShapeMismatch

Grads = Tuple[Optional[np.ndarray], ...]
BackwardFn = Callable[[np.ndarray], Grads]


class Node:
    """One value in the computation graph.

    Attributes:
      value: Forward value.
      grad: Accumulated gradient (same shape as value), None until backward.
      parents: Input nodes, in argument order.
      requires_grad: True if any gradient flows into this node.
      name: Parameter name for leaves, None otherwise.
    """
    __slots__ = ("value", "grad", "parents", "requires_grad", "name", "_backward")

    def __init__(
            self,
            value: np.ndarray,
            parents: Sequence["Node"] = (),
            backward: Optional[BackwardFn] = None,
            requires_grad: bool = False,
            name: Optional[str] = None,
        ):
        self.value = np.asarray(value)
        self.grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self.name = name
        self._backward = backward

    @classmethod
    def leaf(cls, value: np.ndarray, name: Optional[str] = None, requires_grad: bool = True) -> "Node":
        """Graph input; parameters pass their store name."""
        return cls(value, requires_grad=requires_grad, name=name)

    @classmethod
    def const(cls, value: np.ndarray) -> "Node":
        """Input that never receives a gradient."""
        return cls(value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self) -> np.dtype:
        return self.value.dtype

    def item(self) -> float:
        """Scalar value as a Python float."""
        return float(self.value.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Node{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operators dispatch to the primitive functions below.
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return take(self, index)


def _as_node(x, like: Optional[Node] = None) -> Node:
    if isinstance(x, Node):
        return x
    dtype = like.dtype if like is not None else None
    return Node.const(np.asarray(x, dtype=dtype))


def _make(value: np.ndarray, parents: Sequence[Node], backward: BackwardFn) -> Node:
    """Create an op result; drop the closure when nothing upstream needs it."""
    if any(p.requires_grad for p in parents):
        return Node(value, parents, backward, requires_grad=True)
    return Node(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ----- Elementwise and reductions -----------------------------------------

def add(a, b) -> Node:
    a = _as_node(a, b if isinstance(b, Node) else None)
    b = _as_node(b, a)
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _make(a.value + b.value, (a, b), backward)


def sub(a, b) -> Node:
    a = _as_node(a, b if isinstance(b, Node) else None)
    b = _as_node(b, a)
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _make(a.value - b.value, (a, b), backward)


def mul(a, b) -> Node:
    a = _as_node(a, b if isinstance(b, Node) else None)
    b = _as_node(b, a)
    def backward(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)
    return _make(a.value * b.value, (a, b), backward)


def square(a: Node) -> Node:
    def backward(g):
        return (2.0 * a.value * g,)
    return _make(a.value * a.value, (a,), backward)


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    def backward(g):
        return (g * out,)
    return _make(out, (a,), backward)


def sum(a: Node, axis=None) -> Node:  # noqa: A001 - mirrors numpy naming
    """Sum over `axis` (all axes when None)."""
    out = a.value.sum(axis=axis)
    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
    return _make(out, (a,), backward)


def mean(a: Node) -> Node:
    """Mean over every entry."""
    count = a.value.size
    def backward(g):
        return (np.full(a.shape, g / count, dtype=a.dtype),)
    return _make(np.asarray(a.value.mean(), dtype=a.dtype), (a,), backward)


def mse(pred: Node, target) -> Node:
    """Mean squared error over every entry."""
    target = _as_node(target, pred)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: {pred.shape} vs {target.shape}")
    diff = pred.value - target.value
    count = diff.size
    def backward(g):
        d = (2.0 / count) * g * diff
        return d, -d
    return _make(np.asarray(np.mean(diff * diff), dtype=pred.dtype), (pred, target), backward)


# ----- Shape ops ----------------------------------------------------------

def reshape(a: Node, shape: Sequence[int]) -> Node:
    def backward(g):
        return (g.reshape(a.shape),)
    return _make(a.value.reshape(shape), (a,), backward)


def flatten(a: Node) -> Node:
    """[N, ...] -> [N, prod(...)]."""
    return reshape(a, (a.shape[0], -1))


def take(a: Node, index) -> Node:
    """Basic or advanced indexing, e.g. a[:B] to split a stacked batch."""
    def backward(g):
        out = np.zeros_like(a.value)
        np.add.at(out, index, g)
        return (out,)
    return _make(a.value[index], (a,), backward)


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    nodes = list(nodes)
    sizes = [n.shape[axis] for n in nodes]
    bounds = np.cumsum(sizes)[:-1]
    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _make(np.concatenate([n.value for n in nodes], axis=axis), nodes, backward)


# ----- Activations --------------------------------------------------------

def relu(a: Node) -> Node:
    mask = a.value > 0
    def backward(g):
        return (g * mask,)
    return _make(a.value * mask, (a,), backward)


def leaky_relu(a: Node, slope: float = 1e-3) -> Node:
    """max(x, 0) + slope·min(x, 0).

    Examples:
      >>> leaky_relu(Node.const(np.array([-1.0, 2.0]))).value.tolist()
      [-0.001, 2.0]
    """
    scale = np.where(a.value > 0, 1.0, slope).astype(a.dtype)
    def backward(g):
        return (g * scale,)
    return _make(a.value * scale, (a,), backward)


def sigmoid(a: Node) -> Node:
    out = expit(a.value)
    def backward(g):
        return (g * out * (1.0 - out),)
    return _make(out, (a,), backward)


# ----- Dense layers -------------------------------------------------------

def matmul(a: Node, b: Node) -> Node:
    """2-D matrix product."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    def backward(g):
        return g @ b.value.T, a.value.T @ g
    return _make(a.value @ b.value, (a, b), backward)


def linear(x: Node, weight: Node, bias: Node) -> Node:
    """x [N, in] · weightᵀ [in, out] + bias [out]."""
    if x.value.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {weight.shape}")
    def backward(g):
        return g @ weight.value, g.T @ x.value, g.sum(axis=0)
    return _make(x.value @ weight.value.T + bias.value, (x, weight, bias), backward)


def layer_norm(x: Node, gamma: Node, beta: Node, eps: float = 1e-5) -> Node:
    """Normalise over the last axis, then scale and shift."""
    if x.shape[-1] != gamma.shape[-1]:
        raise ShapeMismatch(f"layer_norm: input {x.shape} vs scale {gamma.shape}")
    mu = x.value.mean(axis=-1, keepdims=True)
    var = x.value.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv_std
    count = x.shape[-1]

    def backward(g):
        dxhat = g * gamma.value
        dx = inv_std / count * (
            count * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        reduce_axes = tuple(range(x.value.ndim - 1))
        return dx, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return _make(xhat * gamma.value + beta.value, (x, gamma, beta), backward)


def batch_norm2d(
        x: Node,
        gamma: Node,
        beta: Node,
        running_mean: np.ndarray,
        running_var: np.ndarray,
        training: bool,
        momentum: float = 0.1,
        eps: float = 1e-5,
    ) -> Node:
    """Per-channel batch normalisation of [N, C, H, W] input.

    In training mode the batch statistics normalise the input and the running
    statistics are updated in place (unbiased variance). In inference mode
    the running statistics are used and the op is a per-channel affine map.
    """
    if x.value.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise ShapeMismatch(f"batch_norm2d: input {x.shape} vs {gamma.shape[0]} channels")
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    count = x.value.size // x.shape[1]

    if training:
        mu = x.value.mean(axis=axes)
        var = x.value.var(axis=axes)
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean, running_var

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype).reshape(shape)
    xhat = (x.value - mu.astype(x.dtype).reshape(shape)) * inv_std
    g_scale = gamma.value.reshape(shape)

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * g_scale
        if training:
            dx = inv_std / count * (
                count * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            dx = dxhat * inv_std
        return dx, dgamma, dbeta

    out = xhat * g_scale + beta.value.reshape(shape)
    return _make(out, (x, gamma, beta), backward)


# ----- Convolutions -------------------------------------------------------

def conv_output_size(n: int, kernel: int = 3, stride: int = 2, padding: int = 1) -> int:
    """Output extent of a strided convolution.

    Examples:
      >>> [conv_output_size(n) for n in (2049, 1025, 513, 257)]
      [1025, 513, 257, 129]
      >>> conv_output_size(127)
      64
    """
    return (n + 2 * padding - kernel) // stride + 1


def conv2d(x: Node, weight: Node, bias: Node, stride: int = 2, padding: int = 1) -> Node:
    """2-D cross-correlation via strided windows (im2col + einsum)."""
    if x.value.ndim != 4 or weight.value.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"conv2d: input {x.shape} vs weight {weight.shape}")
    k = weight.shape[-1]
    _, _, h, w = x.shape
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeMismatch(f"conv2d: spatial extent {h}x{w} is smaller than the kernel")

    xp = np.pad(x.value, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("nchwij,ocij->nohw", windows, weight.value, optimize=True)
    out += bias.value.reshape(1, -1, 1, 1)
    ho, wo = out.shape[2:]

    def backward(g):
        dw = np.einsum("nchwij,nohw->ocij", windows, g, optimize=True)
        db = g.sum(axis=(0, 2, 3))
        dwin = np.einsum("nohw,ocij->nchwij", g, weight.value, optimize=True)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += dwin[..., i, j]
        dx = dxp[:, :, padding:padding + h, padding:padding + w]
        return dx, dw, db

    return _make(out, (x, weight, bias), backward)


def conv_transpose2d(
        x: Node,
        weight: Node,
        bias: Node,
        target_shape: Tuple[int, int],
        stride: int = 2,
        padding: int = 1,
    ) -> Node:
    """Adjoint of `conv2d`, cropped or zero-padded to `target_shape`.

    The uncropped extent is (n - 1)·stride + k - 2·padding; targets larger
    than that are zero-padded at the end, smaller ones cropped.
    """
    if x.value.ndim != 4 or weight.value.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise ShapeMismatch(f"conv_transpose2d: input {x.shape} vs weight {weight.shape}")
    k = weight.shape[-1]
    n, _, h, w = x.shape
    c_out = weight.shape[1]
    th, tw = target_shape
    natural = ((h - 1) * stride + k - 2 * padding, (w - 1) * stride + k - 2 * padding)
    if abs(th - natural[0]) > stride or abs(tw - natural[1]) > stride:
        raise ShapeMismatch(f"conv_transpose2d: target {target_shape} inconsistent with {natural}")

    full_h = max((h - 1) * stride + k, padding + th)
    full_w = max((w - 1) * stride + k, padding + tw)
    contrib = np.einsum("nihw,ioab->nohwab", x.value, weight.value, optimize=True)
    full = np.zeros((n, c_out, full_h, full_w), dtype=contrib.dtype)
    for a in range(k):
        for b in range(k):
            full[:, :, a:a + stride * (h - 1) + 1:stride, b:b + stride * (w - 1) + 1:stride] += contrib[..., a, b]
    out = full[:, :, padding:padding + th, padding:padding + tw] + bias.value.reshape(1, -1, 1, 1)

    def backward(g):
        gfull = np.zeros_like(full)
        gfull[:, :, padding:padding + th, padding:padding + tw] = g
        gwin = sliding_window_view(gfull, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h, :w]
        dx = np.einsum("nohwab,ioab->nihw", gwin, weight.value, optimize=True)
        dw = np.einsum("nihw,nohwab->ioab", x.value, gwin, optimize=True)
        return dx, dw, g.sum(axis=(0, 2, 3))

    return _make(np.ascontiguousarray(out), (x, weight, bias), backward)


# ----- Backward pass ------------------------------------------------------

def _topological_order(root: Node) -> list[Node]:
    """Post-order DFS over nodes that require gradients (iterative, stable)."""
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> Dict[str, np.ndarray]:
    """Back-propagate from a scalar loss.

    Returns:
      {parameter name: dLoss/dParam} for every named leaf reachable from the
      loss. Parameters that are not reachable are absent (zero gradient).

    Raises:
      NonScalarLoss: The loss has more than one entry.

    Examples:
      >>> w = Node.leaf(np.array([1.0, 2.0]), "w")
      >>> x = np.array([3.0, -4.0])
      >>> backward(sum(w * x))["w"].tolist()
      [3.0, -4.0]
    """
    if loss.value.size != 1:
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}

    order = _topological_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)

    grads: Dict[str, np.ndarray] = {}
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        if node._backward is None:
            if node.name is not None:
                grads[node.name] = g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype).reshape(parent.shape)
            parent.grad = pg if parent.grad is None else parent.grad + pg
        # Interior gradients are not needed once propagated.
        node.grad = None
    return grads


def gradient_check(
        loss_fn: Callable[[Dict[str, Node]], Node],
        params: Dict[str, np.ndarray],
        max_coords: int = 200,
        rng: Optional[np.random.Generator] = None,
    ) -> float:
    """Compare `backward` against central finite differences.

    Every array in `params` is promoted to float64 in place before checking,
    and `loss_fn` receives one leaf per entry. Up to `max_coords` coordinates
    are sampled across all parameters with step h = 1e-5·max(1, |w|).

    Returns:
      The maximum relative error |a - n| / max(|a|, |n|, 1e-3).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for name in params:
        params[name] = np.asarray(params[name], dtype=np.float64)

    def evaluate() -> Node:
        return loss_fn({name: Node.leaf(arr, name) for name, arr in params.items()})

    analytic = backward(evaluate())
    coords = [(name, i) for name, arr in params.items() for i in range(arr.size)]
    if len(coords) > max_coords:
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[int(p)] for p in sorted(picks)]

    worst = 0.0
    for name, i in coords:
        flat = params[name].reshape(-1)
        original = float(flat[i])
        h = 1e-5 * max(1.0, abs(original))
        flat[i] = original + h
        plus = evaluate().item()
        flat[i] = original - h
        minus = evaluate().item()
        flat[i] = original
        numeric = (plus - minus) / (2.0 * h)
        grad = analytic.get(name)
        a = float(grad.reshape(-1)[i]) if grad is not None else 0.0
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-3))
    return worst

