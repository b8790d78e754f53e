"""Bi-Lipschitz base maps and the box-distortion bounds used by the adversary."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core_nets import ResidualNetwork, iresnet_inverse, resnet_forward
from .errors import NotCertifiedInvertible

Array = np.ndarray


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``center + [-half, half]^d`` (closed)."""

    center: Array
    half: float

    @property
    def lower(self) -> Array:
        return np.asarray(self.center) - self.half

    @property
    def upper(self) -> Array:
        return np.asarray(self.center) + self.half

    def contains(self, x, atol: float = 0.0) -> Array:
        x = np.asarray(x, dtype=float)
        return np.all(np.abs(x - self.center) <= self.half + atol, axis=-1)

    def contains_box(self, other: "Box", atol: float = 1e-12) -> bool:
        return bool(
            np.all(other.lower >= self.lower - atol) and np.all(other.upper <= self.upper + atol)
        )

    def sample(self, n: int, rng: np.random.Generator) -> Array:
        c = np.asarray(self.center, dtype=float)
        return c + rng.uniform(-self.half, self.half, size=(n, c.size))


@dataclass(frozen=True)
class BiLipschitzMap:
    """Invertible map with declared bounds C1 >= Lip(forward), C2 >= Lip(inverse).

    Both callables take ``(..., d)`` arrays.  Declared constants are trusted;
    :func:`falsify_constants` can only refute them.
    """

    forward: Callable[[Array], Array]
    inverse: Callable[[Array], Array]
    C1: float
    C2: float
    d: int
    name: str = "map"

    def __call__(self, x) -> Array:
        return self.forward(x)


def identity_map(d: int) -> BiLipschitzMap:
    if d < 1:
        raise ValueError("d must be >= 1")

    def ident(x):
        return np.array(x, dtype=float)

    return BiLipschitzMap(ident, ident, 1.0, 1.0, d, "identity")


def diagonal_affine_map(scales, offset=None) -> BiLipschitzMap:
    scales = np.asarray(scales, dtype=float)
    if scales.ndim != 1 or np.any(scales <= 0):
        raise ValueError(f"scales must be a positive vector, got {scales}")
    offset = np.zeros_like(scales) if offset is None else np.asarray(offset, dtype=float)

    def forward(x):
        return np.asarray(x, dtype=float) * scales + offset

    def inverse(y):
        return (np.asarray(y, dtype=float) - offset) / scales

    return BiLipschitzMap(
        forward, inverse, float(scales.max()), float(1.0 / scales.min()), scales.size, "diagonal_affine"
    )


def iresnet_map(net: ResidualNetwork, d: int, tol: float = 1e-12) -> BiLipschitzMap:
    """Wrap a certified i-ResNet; C1 = prod(1 + q), C2 = prod 1/(1 - q)."""
    if not net.invertible:
        raise NotCertifiedInvertible(f"Lipschitz bounds {net.lip_bounds} are not all below 1")
    qs = net.lip_bounds
    C1 = math.prod(1.0 + q for q in qs)
    C2 = math.prod(1.0 / (1.0 - q) for q in qs)
    return BiLipschitzMap(
        lambda x: resnet_forward(net, x),
        lambda y: iresnet_inverse(net, y, tol),
        C1,
        C2,
        d,
        "iresnet",
    )


def preimage_box_bounds(f: BiLipschitzMap, x, D: float) -> tuple[Box, Box]:
    """Boxes around x sandwiching ``f^{-1}(f(x) + [-D, D]^d)``."""
    if not D > 0:
        raise ValueError("D must be positive")
    x = np.asarray(x, dtype=float)
    return Box(x, D / f.C1), Box(x, f.C2 * D)


def image_box_bounds(f: BiLipschitzMap, x, D: float) -> tuple[Box, Box]:
    """Boxes around f(x) sandwiching ``f(x + [-D, D]^d)``."""
    if not D > 0:
        raise ValueError("D must be positive")
    fx = np.asarray(f.forward(np.asarray(x, dtype=float)))
    return Box(fx, D / f.C2), Box(fx, f.C1 * D)


@dataclass
class LipschitzReport:
    forward_max: float
    inverse_max: float
    roundtrip_max: float

    def consistent_with(self, f: BiLipschitzMap, rtol: float = 1e-9) -> bool:
        return (
            self.forward_max <= f.C1 * (1 + rtol)
            and self.inverse_max <= f.C2 * (1 + rtol)
        )


def near_offsets(rng: np.random.Generator, shape, h: float) -> Array:
    """Offsets with sup norm in [h/2, h]: small enough to see local slopes, large enough to beat rounding."""
    off = rng.uniform(-h, h, size=shape)
    idx = (np.arange(shape[0]), rng.integers(0, shape[-1], shape[0]))
    off[idx] = rng.choice([-1.0, 1.0], shape[0]) * rng.uniform(0.5 * h, h, shape[0])
    return off


def _quotients(fn, x, y) -> Array:
    num = np.max(np.abs(fn(x) - fn(y)), axis=-1)
    den = np.max(np.abs(x - y), axis=-1)
    keep = den > 0
    return num[keep] / den[keep]


def falsify_constants(
    f: BiLipschitzMap, domain: Box, n_pairs: int = 10_000, seed: int = 0
) -> LipschitzReport:
    """Largest sampled difference quotients of f on ``domain`` and of f^{-1} on its image."""
    rng = np.random.default_rng(seed)
    x, y = domain.sample(n_pairs, rng), domain.sample(n_pairs, rng)
    near = x + near_offsets(rng, x.shape, 1e-6)
    fx, fy, fn = f.forward(x), f.forward(y), f.forward(near)
    fwd = np.concatenate([_quotients(f.forward, x, y), _quotients(f.forward, x, near)])
    inv = np.concatenate([_quotients(f.inverse, fx, fy), _quotients(f.inverse, fx, fn)])
    roundtrip = np.max(np.abs(f.inverse(fx) - x))
    return LipschitzReport(float(fwd.max(initial=0.0)), float(inv.max(initial=0.0)), float(roundtrip))
