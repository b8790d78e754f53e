"""Baseline sampling algorithms for the adversary to attack.

Every learner splits into a sampling step, which produces a
:class:`~iresnet_bounds.adversary.SampleTrace`, and ``reconstruct(trace)``,
which sees nothing but the trace.  Reconstructions are total on [0,1]^d.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .adversary import FoolingFamily, SampleTrace, floor_root
from .base_maps import BiLipschitzMap
from .hat import HatParams, apply_shift

Array = np.ndarray


@dataclass
class LearnerResult:
    trace: SampleTrace
    reconstruction: Callable[[Array], Array]


def uniform_grid(k: int, d: int) -> Array:
    """Cell midpoints of the uniform k^d grid on [0,1]^d."""
    axis = (np.arange(k) + 0.5) / k
    return np.array(list(itertools.product(axis, repeat=d)))


def nearest_neighbor(trace: SampleTrace) -> Callable[[Array], Array]:
    """Piecewise-constant extension: each point takes the value of its nearest sample (sup metric)."""
    tree = cKDTree(trace.points)
    values = trace.values

    def recon(x):
        x = np.asarray(x, dtype=float)
        _, idx = tree.query(x.reshape(-1, trace.points.shape[1]), p=np.inf)
        return values[idx].reshape(x.shape[:-1] + values.shape[1:])

    return recon


class GridLearner:
    """Deterministic, nonadaptive: floor(m^(1/d))^d midpoints, nearest-sample reconstruction."""

    name = "grid"
    adaptive = False

    def __init__(self, m: int, d: int):
        if m < 1:
            raise ValueError("m must be >= 1")
        self.m, self.d = m, d
        self.points = uniform_grid(floor_root(m, d), d)

    def sample(self, target) -> SampleTrace:
        return SampleTrace.record(target, self.points)

    def reconstruct(self, trace: SampleTrace):
        return nearest_neighbor(trace)

    def run(self, target) -> LearnerResult:
        trace = self.sample(target)
        return LearnerResult(trace, self.reconstruct(trace))


def random_budget(m: int, seed: int, master_seed: int = 0, heavy_tail: bool = False) -> int:
    """Per-seed sample count m(s).

    Default: uniform on ``{ceil(m/2), ..., floor(3m/2)}``, drawn antithetically
    for seed pairs (2j, 2j+1) so every pair averages exactly m.  With
    ``heavy_tail`` one seed in four takes 3m and the rest floor(m/3), which
    keeps the mean at most m for m >= 3 but leaves a quarter of seeds above 2m.
    """
    if heavy_tail:
        return 3 * m if seed % 4 == 0 else max(1, m // 3)
    lo, hi = math.ceil(m / 2), (3 * m) // 2
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, seed // 2, 0]))
    u = int(rng.integers(0, hi - lo + 1))
    return lo + u if seed % 2 == 0 else hi - u


class RandomLearner:
    """Seeded random algorithm: m(s) i.i.d. uniform points, nearest-sample reconstruction."""

    name = "random"
    adaptive = False

    def __init__(self, m: int, d: int, seed: int, master_seed: int = 0, heavy_tail: bool = False):
        if m < 1:
            raise ValueError("m must be >= 1")
        self.m, self.d, self.seed = m, d, seed
        self.budget = random_budget(m, seed, master_seed, heavy_tail)
        rng = np.random.default_rng(np.random.SeedSequence([master_seed, seed, 1]))
        self.points = rng.random((self.budget, d))

    def sample(self, target) -> SampleTrace:
        return SampleTrace.record(target, self.points)

    def reconstruct(self, trace: SampleTrace):
        return nearest_neighbor(trace)

    def run(self, target) -> LearnerResult:
        trace = self.sample(target)
        return LearnerResult(trace, self.reconstruct(trace))


@dataclass
class BudgetLedger:
    counts: list[int]
    m: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.counts))

    @property
    def within_double(self) -> float:
        """Fraction of seeds with m(s) <= 2m."""
        return float(np.mean(np.asarray(self.counts) <= 2 * self.m))

    @property
    def ok(self) -> bool:
        return self.mean <= self.m and self.within_double >= 0.5


def budget_ledger(m: int, n_seeds: int, master_seed: int = 0, heavy_tail: bool = False) -> BudgetLedger:
    return BudgetLedger([random_budget(m, s, master_seed, heavy_tail) for s in range(n_seeds)], m)


# ---------------------------------------------------------------------------
# architecture-aware baseline


def _hat_batch(y: Array, centers: Array, M: float, c: float) -> Array:
    """Hat values for every (center, point) pair: shape (n_centers, n_points)."""
    t = y[None, :, :] - centers[:, None, :]
    lam = np.where(t < -1.0 / M, 0.0, c - c * M * np.abs(t))
    d = y.shape[-1]
    return np.maximum(lam.sum(axis=-1) - (d - 1) * c, 0.0)


def _block_batch(y: Array, centers: Array, M: float, c: float, v: int, variant: str) -> Array:
    """Residual-block outputs at images y for many centers: shape (n_centers, n_points, d)."""
    n_c, (n, d) = centers.shape[0], y.shape
    out = np.zeros((n_c, n, d))
    if variant == "iresnet":
        out[..., 0] = v * _hat_batch(y, centers, M, c)
    else:
        for k in range(d):
            out[..., k] = v * _hat_batch(apply_shift(y, k), centers, M, c)
    return out


class ParametricFitLearner:
    """Knows the family: detects a disturbed sample and fits the hat centre to it.

    Samples the same grid as :class:`GridLearner`.  If every sampled value
    matches the base map, the base map is returned.  Otherwise the centre is
    located by coarse-to-fine lattice search (5 points per axis, window shrunk
    4x per level) around the image of the most disturbed sample, minimizing
    the squared residual on the samples.  With ``adaptive=True`` a quarter of
    the budget is held back and spent on extra queries around that sample.
    """

    name = "fit"

    def __init__(
        self,
        m: int,
        family: FoolingFamily,
        search_depth: int = 8,
        adaptive: bool = False,
        atol: float = 1e-12,
    ):
        if m < 1:
            raise ValueError("m must be >= 1")
        self.m, self.family, self.search_depth = m, family, search_depth
        self.adaptive, self.atol = adaptive, atol
        d = family.d
        grid_budget = m - m // 4 if adaptive else m
        self.points = uniform_grid(floor_root(grid_budget, d), d)
        self.extra = m - self.points.shape[0] if adaptive else 0

    @property
    def base(self) -> BiLipschitzMap:
        return self.family.base

    def sample(self, target) -> SampleTrace:
        trace = SampleTrace.record(target, self.points)
        if self.extra <= 0:
            return trace
        dev = self._deviation(trace)
        if dev.max(initial=0.0) <= self.atol:
            return trace
        # follow-up queries around the most disturbed sample
        i = int(np.argmax(dev))
        rng = np.random.default_rng(np.random.SeedSequence([self.m, i]))
        h = self.base.C2 / self.family.M
        more = np.clip(trace.points[i] + rng.uniform(-h, h, (self.extra, self.family.d)), 0.0, 1.0)
        return SampleTrace(
            np.concatenate([trace.points, more]), np.concatenate([trace.values, target(more)])
        )

    def _deviation(self, trace: SampleTrace) -> Array:
        base_vals = self.base.forward(trace.points)
        return np.max(np.abs(trace.values - base_vals), axis=-1)

    def fit(self, trace: SampleTrace) -> HatParams | None:
        if trace.n == 0:
            return None
        dev = self._deviation(trace)
        if dev.max() <= self.atol:
            return None
        fam = self.family
        M, c, d = fam.M, fam.c, fam.d
        images = self.base.forward(trace.points)
        resid = trace.values - images
        i = int(np.argmax(dev))
        k = int(np.argmax(np.abs(resid[i])))
        v = 1 if resid[i, k] > 0 else -1
        # component k of the conv block reads the image shifted by k
        center = apply_shift(images[i], k) if fam.variant == "conv" else images[i]
        h = 1.0 / M
        shifted = [apply_shift(images, j) for j in range(d)] if fam.variant == "conv" else [images]
        near = np.zeros(trace.n, dtype=bool)
        for s in shifted:
            near |= np.max(np.abs(s - center), axis=-1) <= 2.0 / M + h
        y, r = images[near], resid[near]
        # samples outside every candidate support only add a constant to the objective
        steps = np.linspace(-1.0, 1.0, 5)
        offsets = np.array(list(itertools.product(steps, repeat=d)))
        best = center
        for _ in range(self.search_depth):
            cands = best + h * offsets
            pred = _block_batch(y, cands, M, c, v, fam.variant)
            loss = np.sum((pred - r[None]) ** 2, axis=(1, 2))
            best = cands[int(np.argmin(loss))]
            h /= 4.0
        return HatParams(tuple(best), M, c, v)

    def reconstruct(self, trace: SampleTrace):
        params = self.fit(trace)
        base, fam = self.base, self.family
        if params is None:
            return base.forward

        def recon(x):
            y = base.forward(np.asarray(x, dtype=float))
            flat = y.reshape(-1, fam.d)
            pert = _block_batch(flat, np.array([params.z]), params.M, params.c, params.v, fam.variant)[0]
            return y + pert.reshape(y.shape)

        recon.params = params  # type: ignore[attr-defined]
        return recon

    def run(self, target) -> LearnerResult:
        trace = self.sample(target)
        return LearnerResult(trace, self.reconstruct(trace))


LEARNERS = ("grid", "random", "fit")


def make_learner(name: str, master_seed: int = 0, search_depth: int = 8):
    """Factory ``(m, seed, family) -> learner`` for :func:`adversary.run_experiment`."""
    if name == "grid":
        def factory(m, seed, family):
            return GridLearner(m, family.d)
    elif name == "random":
        def factory(m, seed, family):
            return RandomLearner(m, family.d, seed, master_seed)
    elif name == "fit":
        def factory(m, seed, family):
            return ParametricFitLearner(m, family, search_depth)
    elif name == "fit-adaptive":
        def factory(m, seed, family):
            return ParametricFitLearner(m, family, search_depth, adaptive=True)
    else:
        raise ValueError(f"unknown learner {name!r}; choose from {LEARNERS + ('fit-adaptive',)}")
    factory.__name__ = name
    return factory
