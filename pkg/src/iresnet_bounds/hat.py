"""Hat functions, their exact ReLU realizations and the residual blocks built on them."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core_nets import (
    Activation,
    ConvLayer,
    ConvNetwork,
    DenseLayer,
    FeedForwardNetwork,
    ResidualBlock,
    _shift_kernel_index,
)
from .errors import AmplitudeTooLarge, DimensionMismatch

Array = np.ndarray


@dataclass(frozen=True)
class HatParams:
    """Peak location ``z``, inverse half-width ``M``, amplitude ``c`` and sign ``v``."""

    z: tuple[float, ...]
    M: float
    c: float
    v: int = 1

    def __post_init__(self):
        z = tuple(float(t) for t in np.atleast_1d(np.asarray(self.z, dtype=float)))
        object.__setattr__(self, "z", z)
        if not self.M > 0:
            raise ValueError(f"M must be positive, got {self.M}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if self.v not in (1, -1):
            raise ValueError(f"v must be +1 or -1, got {self.v}")
        object.__setattr__(self, "M", float(self.M))
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "v", int(self.v))

    @property
    def d(self) -> int:
        return len(self.z)

    @property
    def zvec(self) -> Array:
        return np.array(self.z)

    @property
    def lip_bound(self) -> float:
        return 3.0 * self.d * self.c * self.M

    def with_sign(self, v: int) -> "HatParams":
        return HatParams(self.z, self.M, self.c, v)

    def to_dict(self) -> dict:
        return {"z": list(self.z), "M": self.M, "c": self.c, "v": self.v}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "HatParams":
        return cls(tuple(data["z"]), data["M"], data["c"], data.get("v", 1))

    @classmethod
    def from_json(cls, text: str) -> "HatParams":
        return cls.from_dict(json.loads(text))


def check_amplitude(p: HatParams) -> None:
    if not p.c < 1.0 / (3 * p.d * p.M):
        raise AmplitudeTooLarge(
            f"c={p.c:g} must be below 1/(3dM)={1 / (3 * p.d * p.M):g} (d={p.d}, M={p.M:g})"
        )


def _check_dim(x: Array, d: int) -> Array:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d:
        raise DimensionMismatch(f"expected trailing dimension {d}, got {x.shape}")
    return x


def lambda_1d(t, t_star, M: float, c: float):
    """One-dimensional ramp: 0 left of ``t* - 1/M``, else ``c - cM|t - t*|``."""
    t = np.asarray(t, dtype=float)
    out = np.where(t < t_star - 1.0 / M, 0.0, c - c * M * np.abs(t - t_star))
    return out if out.ndim else float(out)


def delta(x, p: HatParams):
    x = _check_dim(x, p.d)
    s = np.sum(lambda_1d(x, p.zvec, p.M, p.c), axis=-1) - (p.d - 1) * p.c
    return s if np.ndim(s) else float(s)


def hat_value(x, p: HatParams):
    """The hat function: ReLU of ``delta``; supported on ``z + [-1/M, 1/M]^d``."""
    val = np.maximum(delta(x, p), 0.0)
    return val if np.ndim(val) else float(val)


@dataclass(frozen=True)
class HatFnnWeights:
    W1: Array
    b1: Array
    W2: Array
    b2: float
    W3: Array
    b3: Array


def hat_fnn_weights(p: HatParams, signed: bool = False) -> HatFnnWeights:
    """Explicit weights of the two-hidden-layer ReLU net realizing the hat.

    Unsigned, the output layer is ``W3 = 1``.  Signed, it is the d x 1 column
    ``(v, 0, ..., 0)^T`` of the residual block (for d = 1 that is just ``v``).
    """
    d, cM = p.d, p.c * p.M
    z = p.zvec
    eye = np.eye(d)
    W1 = np.vstack([cM * eye, 2 * cM * eye])
    b1 = np.concatenate([p.c - cM * z, -2 * cM * z])
    W2 = np.concatenate([np.ones(d), -np.ones(d)])[None, :]
    b2 = -(d - 1) * p.c
    if signed:
        W3 = np.zeros((d, 1))
        W3[0, 0] = p.v
    else:
        W3 = np.ones((1, 1))
    return HatFnnWeights(W1, b1, W2, b2, W3, np.zeros(W3.shape[0]))


def _fnn_from_weights(w: HatFnnWeights) -> FeedForwardNetwork:
    return FeedForwardNetwork(
        (
            DenseLayer(w.W1, w.b1, Activation.RELU),
            DenseLayer(w.W2, [w.b2], Activation.RELU),
            DenseLayer(w.W3, w.b3, Activation.IDENTITY),
        )
    )


def hat_as_fnn(p: HatParams) -> FeedForwardNetwork:
    """Feedforward ReLU network with architecture (d, 2d, 1, 1; relu) equal to the hat."""
    return _fnn_from_weights(hat_fnn_weights(p))


def theta_network(p: HatParams) -> FeedForwardNetwork:
    """The (d, 2d, 1, d; relu) network ``x -> (v * hat(x), 0, ..., 0)``."""
    check_amplitude(p)
    return _fnn_from_weights(hat_fnn_weights(p, signed=True))


def theta_block(p: HatParams) -> ResidualBlock:
    """Residual block perturbing only the first coordinate; Lip bound 3dcM < 1."""
    net = theta_network(p)
    return ResidualBlock(net, p.lip_bound, label=f"theta{p.z}")


def theta_value(x, p: HatParams) -> Array:
    """Direct-formula evaluation of the block output (no network)."""
    x = _check_dim(x, p.d)
    out = np.zeros_like(x)
    out[..., 0] = p.v * hat_value(x, p)
    return out


def apply_shift(x, k: int = 1) -> Array:
    """``x R^k`` where ``xR = (x_2, ..., x_d, x_1)``; k is taken mod d."""
    x = np.asarray(x, dtype=float)
    return np.roll(x, -(k % x.shape[-1]), axis=-1)


def phi_value(x, p: HatParams) -> Array:
    """Translation-equivariant block: ``v * (hat(x), hat(xR), ..., hat(xR^{d-1}))``."""
    x = _check_dim(x, p.d)
    cols = [hat_value(apply_shift(x, k), p) for k in range(p.d)]
    return p.v * np.stack(cols, axis=-1)


def phi_as_cnn(p: HatParams) -> ConvNetwork:
    """Convolutional realization of ``phi_value`` with architecture (d; 1, 2d, 1, 1; relu).

    Hidden channel ``(i, r)`` (index ``(r-1)*d + i``) reads coordinate ``k+i``
    at output position k with weight ``r*cM`` and the matching entry of b1;
    the second layer adds the first d channels and subtracts the last d at
    zero offset; the output layer scales by v.
    """
    check_amplitude(p)
    d, cM = p.d, p.c * p.M
    w = hat_fnn_weights(p)
    k1 = np.zeros((1, 2 * d, d))
    for r in (1, 2):
        for i in range(d):
            k1[0, (r - 1) * d + i, _shift_kernel_index(i, d)] = r * cM
    ident = _shift_kernel_index(0, d)
    k2 = np.zeros((2 * d, 1, d))
    k2[:d, 0, ident] = 1.0
    k2[d:, 0, ident] = -1.0
    k3 = np.zeros((1, 1, d))
    k3[0, 0, ident] = p.v
    return ConvNetwork(
        (
            ConvLayer(k1, w.b1, Activation.RELU),
            ConvLayer(k2, [w.b2], Activation.RELU),
            ConvLayer(k3, [0.0], Activation.IDENTITY),
        )
    )


def phi_block(p: HatParams) -> ResidualBlock:
    net = phi_as_cnn(p)
    return ResidualBlock(net, p.lip_bound, label=f"phi{p.z}")


def in_support_cube(x, p: HatParams, half_width: float | None = None) -> Array:
    """Closed-cube membership ``x in z + [-h, h]^d`` (default ``h = 1/M``)."""
    h = 1.0 / p.M if half_width is None else half_width
    x = _check_dim(x, p.d)
    return np.all(np.abs(x - p.zvec) <= h, axis=-1)
