"""From-scratch feedforward, circular-convolution and residual networks.

Vectors are rows: a dense layer computes ``act(x @ W.T + b)`` and every
callable here accepts arrays of shape ``(..., n)`` so whole batches are
evaluated at once.  Convolution inputs carry a channel axis before the data
axis, ``(..., channels, d)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, NoConvergence, NotCertifiedInvertible

Array = np.ndarray


class Activation(enum.Enum):
    RELU = "relu"
    IDENTITY = "identity"

    def __call__(self, x: Array) -> Array:
        if self is Activation.RELU:
            return relu(x)
        return np.asarray(x, dtype=float)


def relu(x) -> Array:
    return np.maximum(np.asarray(x, dtype=float), 0.0)


def _shift_kernel_index(offset: int, d: int) -> int:
    """Kernel slot whose one-hot kernel ``e`` gives ``(e * x)_k = x_{k+offset}``."""
    return (-offset - 1) % d


def circulant(u) -> Array:
    """Matrix ``C`` with ``(u * v) = v @ C.T`` for the cyclic convolution.

    The 1-based definition ``(u*v)_i = sum_j u_{i-j} v_j`` becomes, with
    0-based storage, ``C[k, j] = u[(k - j - 1) mod d]``.
    """
    u = np.asarray(u, dtype=float)
    d = u.shape[-1]
    k = np.arange(d)[:, None]
    j = np.arange(d)[None, :]
    return u[..., (k - j - 1) % d]


def circ_conv(u, v) -> Array:
    """Cyclic convolution ``u * v`` of two length-d vectors (v may be batched)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.ndim != 1 or u.shape[-1] != v.shape[-1]:
        raise DimensionMismatch(f"circ_conv needs equal lengths, got {u.shape} and {v.shape}")
    return v @ circulant(u).T


@dataclass(frozen=True)
class DenseLayer:
    weight: Array
    bias: Array
    activation: Activation = Activation.RELU

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weight, dtype=float))
        b = np.atleast_1d(np.asarray(self.bias, dtype=float))
        if b.shape != (w.shape[0],):
            raise DimensionMismatch(f"bias shape {b.shape} does not match weight {w.shape}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x) -> Array:
        return apply_dense(self, x)


def apply_dense(layer: DenseLayer, x) -> Array:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.in_dim:
        raise DimensionMismatch(f"layer expects {layer.in_dim} inputs, got {x.shape[-1]}")
    return layer.activation(x @ layer.weight.T + layer.bias)


@dataclass(frozen=True)
class ConvLayer:
    """Stride-1, periodically padded convolution with full-size kernels.

    ``kernels[i, j]`` is the length-d kernel from input channel i to output
    channel j.
    """

    kernels: Array
    bias: Array
    activation: Activation = Activation.RELU
    _mats: Array = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        k = np.asarray(self.kernels, dtype=float)
        if k.ndim != 3:
            raise DimensionMismatch("kernels must have shape (in_channels, out_channels, d)")
        b = np.atleast_1d(np.asarray(self.bias, dtype=float))
        if b.shape != (k.shape[1],):
            raise DimensionMismatch(f"bias shape {b.shape} does not match {k.shape[1]} output channels")
        object.__setattr__(self, "kernels", k)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "_mats", circulant(k))

    @property
    def data_size(self) -> int:
        return self.kernels.shape[2]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[1]

    def __call__(self, x) -> Array:
        return apply_conv(self, x)


def apply_conv(layer: ConvLayer, x) -> Array:
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-2:] != (layer.in_channels, layer.data_size):
        raise DimensionMismatch(
            f"conv layer expects (..., {layer.in_channels}, {layer.data_size}), got {x.shape}"
        )
    # out[..., j, k] = sum_i sum_l C_ij[k, l] x[..., i, l]
    out = np.einsum("ijkl,...il->...jk", layer._mats, x)
    return layer.activation(out + layer.bias[:, None])


@dataclass(frozen=True)
class NetworkArchitecture:
    kind: str  # "fnn" or "cnn"
    dims: tuple[int, ...]
    activation: Activation = Activation.RELU
    data_size: int | None = None

    def __str__(self) -> str:
        dims = ",".join(str(n) for n in self.dims)
        if self.kind == "cnn":
            return f"({self.data_size};{dims};{self.activation.value})"
        return f"({dims};{self.activation.value})"


def _check_output_layer(layers: Sequence) -> Activation:
    if not layers:
        raise ValueError("a network needs at least one layer")
    if layers[-1].activation is not Activation.IDENTITY:
        raise ValueError("the output layer must use the identity activation")
    hidden = {layer.activation for layer in layers[:-1]}
    if len(hidden) > 1:
        raise ValueError("hidden layers must share one activation")
    return hidden.pop() if hidden else Activation.IDENTITY


@dataclass(frozen=True)
class FeedForwardNetwork:
    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        _check_output_layer(self.layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionMismatch(f"layer widths {a.out_dim} -> {b.in_dim} do not chain")

    @property
    def architecture(self) -> NetworkArchitecture:
        dims = (self.layers[0].in_dim,) + tuple(layer.out_dim for layer in self.layers)
        return NetworkArchitecture("fnn", dims, _check_output_layer(self.layers))

    def weights(self) -> list[Array]:
        return [layer.weight for layer in self.layers]

    def biases(self) -> list[Array]:
        return [layer.bias for layer in self.layers]

    def __call__(self, x) -> Array:
        for layer in self.layers:
            x = apply_dense(layer, x)
        return x


@dataclass(frozen=True)
class ConvNetwork:
    """Stack of convolutional layers.

    With ``single_channel=True`` the network is used as a map R^d -> R^d:
    inputs of shape ``(..., d)`` get a channel axis added and the single
    output channel is squeezed away.
    """

    layers: tuple[ConvLayer, ...]
    single_channel: bool = True

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        _check_output_layer(self.layers)
        d = self.layers[0].data_size
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_channels != b.in_channels or b.data_size != d:
                raise DimensionMismatch("convolutional layers do not chain")
        if self.single_channel and (self.layers[0].in_channels != 1 or self.layers[-1].out_channels != 1):
            raise DimensionMismatch("single-channel use needs 1 input and 1 output channel")

    @property
    def data_size(self) -> int:
        return self.layers[0].data_size

    @property
    def architecture(self) -> NetworkArchitecture:
        dims = (self.layers[0].in_channels,) + tuple(layer.out_channels for layer in self.layers)
        return NetworkArchitecture("cnn", dims, _check_output_layer(self.layers), self.data_size)

    def kernels(self) -> list[Array]:
        return [layer.kernels for layer in self.layers]

    def biases(self) -> list[Array]:
        return [layer.bias for layer in self.layers]

    def __call__(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if self.single_channel:
            x = x[..., None, :]
        for layer in self.layers:
            x = apply_conv(layer, x)
        return x[..., 0, :] if self.single_channel else x


@dataclass(frozen=True)
class ResidualBlock:
    """Residual function ``G`` with a caller-certified bound on Lip(G) (sup norm)."""

    residual: Callable[[Array], Array]
    lip_bound: float
    label: str = ""

    def __call__(self, x) -> Array:
        return self.residual(x)


@dataclass(frozen=True)
class ResidualNetwork:
    blocks: tuple[ResidualBlock, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def lip_bounds(self) -> tuple[float, ...]:
        return tuple(b.lip_bound for b in self.blocks)

    @property
    def invertible(self) -> bool:
        return all(q < 1 for q in self.lip_bounds)

    def __len__(self) -> int:
        return len(self.blocks)

    def __call__(self, x) -> Array:
        return resnet_forward(self, x)


def resnet_forward(net: ResidualNetwork, x) -> Array:
    x = np.asarray(x, dtype=float)
    for block in net.blocks:
        x = block(x) + x
    return x


@dataclass
class InversionResult:
    x: Array
    iterations: list[int]  # per block, last block first
    residuals: list[list[float]]  # sup-norm residual after each iterate, per block


def iteration_cap(q: float, scale: float, tol: float) -> int:
    """Iterations the contraction needs to bring ``scale`` below ``tol``, plus 64 slack."""
    if scale <= tol or q <= 0:
        return 64
    return math.ceil(math.log(tol / scale) / math.log(q)) + 64


def _invert_block(block: ResidualBlock, y: Array, tol: float) -> tuple[Array, int, list[float]]:
    q = block.lip_bound
    x = y.copy()
    g = block(x)
    # ||x_k - x_{k+1}|| <= q^k ||G(y)||, and x_k - x_{k+1} is exactly the residual
    cap = iteration_cap(q, float(np.max(np.abs(g), initial=0.0)), tol)
    history = []
    for k in range(cap + 1):
        r = float(np.max(np.abs(x + g - y), initial=0.0))
        history.append(r)
        if r <= tol:
            return x, k, history
        x = y - g
        g = block(x)
    raise NoConvergence(
        f"block {block.label or '?'} did not reach tol={tol:g} in {cap} iterations "
        f"(residual {history[-1]:.3e}); its Lipschitz certificate {q} is likely wrong"
    )


def invert_with_stats(net: ResidualNetwork, y, tol: float = 1e-10) -> InversionResult:
    bad = [i for i, q in enumerate(net.lip_bounds) if not q < 1]
    if bad:
        raise NotCertifiedInvertible(
            f"blocks {bad} have Lipschitz bounds {[net.lip_bounds[i] for i in bad]} >= 1"
        )
    x = np.array(y, dtype=float)
    iterations, residuals = [], []
    for block in reversed(net.blocks):
        x, k, hist = _invert_block(block, x, tol)
        iterations.append(k)
        residuals.append(hist)
    return InversionResult(x, iterations, residuals)


def iresnet_inverse(net: ResidualNetwork, y, tol: float = 1e-10) -> Array:
    """Invert an i-ResNet block by block with ``x <- y - G(x)`` started at ``x = y``."""
    return invert_with_stats(net, y, tol).x
