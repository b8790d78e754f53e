"""L^p(Omega, R^d) distances with sup-norm inner norm, quadrature rules, sampled Lipschitz quotients.

The inner norm is always the sup norm over output coordinates.  For ``p = INF``
a node maximum is only a lower estimate of the true supremum, so callers
should pass known maximizers through ``extra_nodes``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Union

import numpy as np

from .base_maps import near_offsets

Array = np.ndarray


class Norm(enum.Enum):
    INF = "inf"

    def __str__(self) -> str:
        return "inf"


INF = Norm.INF
PValue = Union[float, Norm]


def parse_p(value) -> PValue:
    if value is INF or (isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "∞")):
        return INF
    p = float(value)
    if math.isinf(p):
        return INF
    if not p >= 1:
        raise ValueError(f"p must be >= 1 or 'inf', got {value!r}")
    return p


def format_p(p: PValue) -> str:
    if p is INF:
        return "inf"
    return f"{p:g}"


def d_over_p(d: int, p: PValue) -> float:
    """``d / p`` with the convention ``s / inf = 0``."""
    return 0.0 if p is INF else d / p


@dataclass(frozen=True)
class QuadratureSpec:
    kind: str  # "tensor_midpoint" or "monte_carlo"
    resolution: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("tensor_midpoint", "monte_carlo"):
            raise ValueError(f"unknown quadrature kind {self.kind!r}")
        if self.resolution < 1:
            raise ValueError("resolution must be positive")
        object.__setattr__(self, "lower", tuple(float(a) for a in self.lower))
        object.__setattr__(self, "upper", tuple(float(b) for b in self.upper))
        if len(self.lower) != len(self.upper):
            raise ValueError("domain bounds differ in length")

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return math.prod(b - a for a, b in zip(self.lower, self.upper))

    @property
    def n_nodes(self) -> int:
        if self.kind == "tensor_midpoint":
            return self.resolution**self.d
        return self.resolution

    def node_chunks(self, chunk: int = 1 << 18) -> Iterator[Array]:
        lo, hi = np.array(self.lower), np.array(self.upper)
        if self.kind == "monte_carlo":
            rng = np.random.default_rng(self.seed)
            done = 0
            while done < self.resolution:
                n = min(chunk, self.resolution - done)
                yield lo + (hi - lo) * rng.random((n, self.d))
                done += n
            return
        h = (hi - lo) / self.resolution
        total = self.n_nodes
        for start in range(0, total, chunk):
            flat = np.arange(start, min(start + chunk, total))
            idx = np.stack(np.unravel_index(flat, (self.resolution,) * self.d), axis=-1)
            yield lo + (idx + 0.5) * h

    def nodes(self) -> Array:
        return np.concatenate(list(self.node_chunks()), axis=0)

    @property
    def weight(self) -> float:
        return self.volume / self.n_nodes


def unit_cube(d: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    return (0.0,) * d, (1.0,) * d


def default_quadrature(d: int, seed: int = 0, lower=None, upper=None) -> QuadratureSpec:
    lo, hi = unit_cube(d)
    lo = lo if lower is None else lower
    hi = hi if upper is None else upper
    if d <= 3:
        return QuadratureSpec("tensor_midpoint", {1: 256, 2: 128, 3: 48}[d], lo, hi)
    return QuadratureSpec("monte_carlo", 1_000_000, lo, hi, seed)


def _sup_gap(f, g, x: Array) -> Array:
    diff = np.asarray(f(x), dtype=float) - np.asarray(g(x), dtype=float)
    if diff.ndim == 1:
        return np.abs(diff)
    return np.max(np.abs(diff), axis=-1)


def lp_distance(
    f: Callable[[Array], Array],
    g: Callable[[Array], Array],
    p: PValue,
    q: QuadratureSpec,
    extra_nodes=None,
) -> float:
    """Quadrature estimate of ``(int ||f - g||_inf^p)^(1/p)`` over the box of ``q``.

    For ``p = INF`` this is the maximum over the nodes and ``extra_nodes``
    (a lower estimate of the sup).  Finite-p sums use ``math.fsum`` so the
    result does not depend on evaluation order.
    """
    p = parse_p(p)
    if p is INF:
        best = 0.0
        for x in q.node_chunks():
            best = max(best, float(_sup_gap(f, g, x).max(initial=0.0)))
        if extra_nodes is not None:
            extra = np.atleast_2d(np.asarray(extra_nodes, dtype=float))
            best = max(best, float(_sup_gap(f, g, extra).max(initial=0.0)))
        return best
    parts = [_sup_gap(f, g, x) ** p for x in q.node_chunks()]
    total = math.fsum(np.concatenate(parts)) * q.weight
    return total ** (1.0 / p)


def sup_distance_fooling(pair, base, atol: float = 1e-12) -> float:
    """``||f_{z,+1} - f_{z,-1}||_inf`` evaluated at the known maximizer ``base^{-1}(z)``."""
    x_star = np.asarray(base.inverse(np.asarray(pair.z, dtype=float)), dtype=float)
    if np.any(x_star < -atol) or np.any(x_star > 1 + atol):
        raise ValueError(f"maximizer {x_star} lies outside [0,1]^d")
    return float(np.max(np.abs(pair.plus(x_star) - pair.minus(x_star))))


def pair_distance_bounds(
    d: int, p: PValue, C1: float, C2: float, M: float, c: float, variant: str = "iresnet"
) -> tuple[float, float]:
    """Two-sided bounds on the L^p distance of a fooling pair.

    The convolutional variant has up to d support cubes, hence the extra
    factor d in the upper bound.
    """
    r = d_over_p(d, p)
    lower = c * d**-r * C1**-r * M**-r
    upper = c * 2 ** (r + 1) * C2**r * M**-r
    if variant == "conv":
        upper *= d
    return lower, upper


def lipschitz_sample_estimate(
    f: Callable[[Array], Array],
    lower,
    upper,
    n_pairs: int = 10_000,
    seed: int = 0,
    perturbation: float = 1e-6,
) -> float:
    """Largest sampled ``||f(x) - f(y)||_inf / ||x - y||_inf``: a lower bound on Lip(f).

    Half the budget goes to uniform pairs, half to pairs at distance
    ``perturbation`` which catch steep local slopes.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    d = lo.size
    n_far = max(1, n_pairs // 2)
    n_near = max(1, n_pairs - n_far)
    x = lo + (hi - lo) * rng.random((n_far + n_near, d))
    y = np.empty_like(x)
    y[:n_far] = lo + (hi - lo) * rng.random((n_far, d))
    y[n_far:] = x[n_far:] + near_offsets(rng, (n_near, d), perturbation)
    fx, fy = np.asarray(f(x), dtype=float), np.asarray(f(y), dtype=float)
    num = np.abs(fx - fy)
    if num.ndim > 1:
        num = num.max(axis=-1)
    den = np.max(np.abs(x - y), axis=-1)
    keep = den > 0
    return float(np.max(num[keep] / den[keep], initial=0.0))
