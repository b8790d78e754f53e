"""Fooling families against sampling algorithms, and the harness that runs them.

For a sample budget m the adversary lays a grid of hat-block centres inside
the image of the base map, throws away every centre whose support cube (or,
for the convolutional block, any cyclic shift of it) contains a sampled
image, and keeps the rest.  Each survivor z yields two members
``f_{z,+1}, f_{z,-1}`` that agree with the base map on every sample but are
``2c`` apart in sup norm, so no reconstruction from that trace can be closer
than ``c`` to both.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .base_maps import BiLipschitzMap, image_box_bounds
from .core_nets import ConvNetwork, FeedForwardNetwork, ResidualBlock
from .errors import BudgetExceeded, EmptyFilteredGrid, ImageTooSmall
from .hat import HatParams, apply_shift, phi_block, theta_block
from .metrics import (
    INF,
    PValue,
    QuadratureSpec,
    d_over_p,
    default_quadrature,
    format_p,
    lp_distance,
    parse_p,
)

Array = np.ndarray
VARIANTS = ("iresnet", "conv")


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")


def ceil_root(n: int, d: int) -> int:
    """Smallest integer k with ``k**d >= n`` (exact, no float rounding)."""
    k = max(1, int(round(n ** (1.0 / d))))
    while k**d < n:
        k += 1
    while k > 1 and (k - 1) ** d >= n:
        k -= 1
    return k


def floor_root(n: int, d: int) -> int:
    """Largest integer k with ``k**d <= n``."""
    k = max(1, int(n ** (1.0 / d)))
    while (k + 1) ** d <= n:
        k += 1
    while k > 1 and k**d > n:
        k -= 1
    return k


def grid_target_count(variant: str, m: int, d: int) -> int:
    return 3 * m if variant == "iresnet" else 3 * d * m


@dataclass(frozen=True)
class SampleTrace:
    points: Array
    values: Array

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if len(pts) == 0:
            pts = pts.reshape(0, max(pts.shape[-1], 0))
            vals = vals.reshape(0, max(vals.shape[-1], 0))
        if pts.shape[0] != vals.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {vals.shape[0]} values")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @classmethod
    def record(cls, target: Callable[[Array], Array], points) -> "SampleTrace":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(pts, target(pts))

    @classmethod
    def empty(cls, d: int) -> "SampleTrace":
        return cls(np.zeros((0, d)), np.zeros((0, d)))

    def max_deviation(self, other: "SampleTrace") -> float:
        """Largest difference between two traces; inf if they queried different points."""
        if self.points.shape != other.points.shape or not np.array_equal(self.points, other.points):
            return math.inf
        if self.n == 0:
            return 0.0
        return float(np.max(np.abs(self.values - other.values)))


@dataclass(frozen=True)
class GridSpec:
    variant: str
    m: int
    base: BiLipschitzMap
    K: int  # grid points per axis
    M: float
    gamma: Array
    x_star: Array

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def size(self) -> int:
        return self.gamma.shape[0]


def build_grid(variant: str, m: int, base: BiLipschitzMap) -> GridSpec:
    """Grid of centres, spacing 2/M, whose support cubes tile a box inside the base image."""
    _check_variant(variant)
    if m < 1:
        raise ValueError("m must be >= 1")
    d, C2 = base.d, base.C2
    K = ceil_root(grid_target_count(variant, m, d), d)
    M = 2.0 * C2 * K
    x_star = np.full(d, 0.5)
    inner, _ = image_box_bounds(base, x_star, 0.5)
    axis = (2.0 / M) * np.arange(K)
    offsets = np.array(list(itertools.product(axis, repeat=d)))
    gamma = inner.center + (1.0 / M - 1.0 / (2 * C2)) + offsets
    lo, hi = gamma.min(axis=0) - 1.0 / M, gamma.max(axis=0) + 1.0 / M
    if np.any(lo < inner.lower - 1e-12) or np.any(hi > inner.upper + 1e-12):
        raise ImageTooSmall("grid support cubes leave the guaranteed image box")
    # falsify the declared C2: corners of the inner image box must pull back into [0,1]^d
    corners = inner.center + inner.half * np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
    pre = np.asarray(base.inverse(corners))
    if np.any(pre < -1e-9) or np.any(pre > 1 + 1e-9):
        raise ImageTooSmall(
            f"base map '{base.name}' does not cover f(x*) +- 1/(2 C2); declared C2={C2} is too small"
        )
    return GridSpec(variant, m, base, K, M, gamma, x_star)


def _images(grid: GridSpec, trace: SampleTrace) -> Array:
    imgs = np.asarray(grid.base.forward(trace.points), dtype=float).reshape(-1, grid.d)
    if grid.variant == "conv":
        imgs = np.concatenate([apply_shift(imgs, j) for j in range(1, grid.d + 1)], axis=0)
    return imgs


def filter_mask(grid: GridSpec, trace: SampleTrace) -> Array:
    """True for centres whose open support cube(s) avoid every sampled image.

    The hat vanishes on the cube boundary, so a sample on a face carries no
    information.  Each image is assigned to its nearest lattice cell by index
    and can only remove that one centre (d centres for the conv variant, one
    per shifted image); comparing against all centres would let rounding in
    the grid coordinates put a face sample inside two neighbouring cubes.
    """
    if trace.n > 2 * grid.m:
        raise BudgetExceeded(f"trace has {trace.n} samples, more than 2m = {2 * grid.m}")
    keep = np.ones(grid.size, dtype=bool)
    if trace.n == 0:
        return keep
    imgs = _images(grid, trace)
    start = grid.gamma[0]  # lexicographically first centre, the lattice origin
    idx = np.rint((imgs - start) * (grid.M / 2.0)).astype(np.int64)
    valid = np.all((idx >= 0) & (idx < grid.K), axis=-1)
    flat = np.ravel_multi_index(tuple(idx[valid].T), (grid.K,) * grid.d)
    inside = np.all(np.abs(imgs[valid] - grid.gamma[flat]) < 1.0 / grid.M, axis=-1)
    keep[flat[inside]] = False
    return keep


def filter_grid(grid: GridSpec, trace: SampleTrace) -> Array:
    return grid.gamma[filter_mask(grid, trace)]


def count_floor(grid: GridSpec, n: int) -> int:
    """Survivor count the counting argument guarantees after n samples."""
    per_sample = 1 if grid.variant == "iresnet" else grid.d
    return grid.size - per_sample * n


@dataclass(frozen=True)
class FoolingPair:
    z: Array
    plus: Callable[[Array], Array]
    minus: Callable[[Array], Array]
    c: float
    params: HatParams


@dataclass(frozen=True)
class FoolingFamily:
    grid: GridSpec

    @property
    def variant(self) -> str:
        return self.grid.variant

    @property
    def base(self) -> BiLipschitzMap:
        return self.grid.base

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def M(self) -> float:
        return self.grid.M

    @property
    def c(self) -> float:
        return 1.0 / (6 * self.d * self.M)

    def params(self, z, v: int) -> HatParams:
        return HatParams(tuple(np.asarray(z, dtype=float)), self.M, self.c, v)

    def block(self, z, v: int) -> ResidualBlock:
        p = self.params(z, v)
        return theta_block(p) if self.variant == "iresnet" else phi_block(p)

    def member(self, z, v: int) -> Callable[[Array], Array]:
        """``(block + id) o base``: the base map with one hat disturbance on top."""
        block, base = self.block(z, v), self.base

        def f_zv(x):
            y = base.forward(np.asarray(x, dtype=float))
            return y + block(y)

        return f_zv

    def maximizer(self, z) -> Array:
        return np.asarray(self.base.inverse(np.asarray(z, dtype=float)), dtype=float)


def build_family(variant: str, m: int, base: BiLipschitzMap) -> FoolingFamily:
    return FoolingFamily(build_grid(variant, m, base))


def fooling_pair(family: FoolingFamily, z) -> FoolingPair:
    z = np.asarray(z, dtype=float)
    return FoolingPair(z, family.member(z, 1), family.member(z, -1), family.c, family.params(z, 1))


def guaranteed_floor(family: FoolingFamily, trace: SampleTrace) -> float:
    """Sup-norm error no reconstruction from ``trace`` can beat on the whole family."""
    if not filter_mask(family.grid, trace).any():
        raise EmptyFilteredGrid("every grid centre is hit by a sample")
    return family.c


def mean_error_bound(family: FoolingFamily, p: PValue) -> float:
    """Lower bound on the family-averaged error of any deterministic algorithm using <= 2m samples."""
    d, r = family.d, d_over_p(family.d, parse_p(p))
    C1 = family.base.C1
    return family.c * d**-r * C1**-r * family.M**-r / (3 * 2 ** (d + 1))


def lower_bound_constant(d: int, p: PValue, C1: float = 1.0, C2: float = 1.0) -> float:
    """Constant multiplying ``(3m)^(-1/p-1/d)`` (or ``(3dm)^...``) in the optimal-error bound."""
    r = d_over_p(d, parse_p(p))
    return d ** (-r - 1) * C1**-r * (4 * C2) ** (-r - 1) / (9 * 2 ** (d + 3))


def lower_bound_value(variant: str, d: int, p: PValue, m: int, C1: float = 1.0, C2: float = 1.0) -> float:
    p = parse_p(p)
    inv_p = 0.0 if p is INF else 1.0 / p
    return lower_bound_constant(d, p, C1, C2) * grid_target_count(variant, m, d) ** (-inv_p - 1.0 / d)


@dataclass
class MembershipReport:
    architecture: str
    architecture_ok: bool
    weight_sup: float
    lip_bound: float
    bias_sup: float

    @property
    def ok(self) -> bool:
        return self.architecture_ok and self.weight_sup <= 1.0 and self.lip_bound < 1.0


def audit_membership(block: ResidualBlock, variant: str, d: int) -> MembershipReport:
    """Check architecture, weight/kernel sup norm <= 1 and certified Lip < 1.

    Biases are reported but not capped.
    """
    net = block.residual
    if variant == "iresnet":
        expected = (d, 2 * d, 1, d)
        ok = isinstance(net, FeedForwardNetwork) and net.architecture.dims == expected
        weights, biases = net.weights(), net.biases()
    else:
        expected = (1, 2 * d, 1, 1)
        ok = (
            isinstance(net, ConvNetwork)
            and net.architecture.dims == expected
            and net.architecture.data_size == d
        )
        weights, biases = net.kernels(), net.biases()
    ok = ok and net.architecture.activation.value == "relu"
    return MembershipReport(
        str(net.architecture),
        bool(ok),
        float(max(np.max(np.abs(w)) for w in weights)),
        float(block.lip_bound),
        float(max(np.max(np.abs(b)) for b in biases)),
    )


# ---------------------------------------------------------------------------
# experiment harness

CSV_COLUMNS = (
    "variant", "d", "p", "m", "learner", "seed", "n_samples", "grid_size", "filtered_size",
    "floor_c", "worst_err", "mean_err", "bound_C", "bound_value",
)
SLOPE_PREFIX = "slope:"
FLOOR_ATOL = 1e-15


@dataclass
class ReportRow:
    variant: str
    d: int
    p: str
    m: int | None
    learner: str
    seed: int | None
    n_samples: int | None
    grid_size: int | None
    filtered_size: int | None
    floor_c: float
    worst_err: float | None
    mean_err: float | None
    bound_C: float | None
    bound_value: float | None

    def sort_key(self):
        return (self.variant, self.d, self.p, self.m if self.m is not None else math.inf,
                self.learner, self.seed if self.seed is not None else -1)


@dataclass
class ExperimentReport:
    rows: list[ReportRow]
    summary: list[ReportRow] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)

    def slopes(self) -> dict[tuple, float]:
        """Fitted floor-vs-m slope keyed by (variant, d, p, learner)."""
        return {
            (r.variant, r.d, r.p, r.learner[len(SLOPE_PREFIX):]): r.floor_c for r in self.summary
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows + self.summary:
            w.writerow([_fmt(getattr(row, k)) for k in CSV_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "rows": [_json_row(r) for r in self.rows],
            "summary": [_json_row(r) for r in self.summary],
            "checks": dict(self.checks),
        }
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def _json_value(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def _json_row(row: ReportRow) -> dict:
    return {k: _json_value(getattr(row, k)) for k in CSV_COLUMNS}


def fit_loglog_slope(ms: Sequence[float], values: Sequence[float]) -> float:
    x, y = np.log(np.asarray(ms, dtype=float)), np.log(np.asarray(values, dtype=float))
    if len(np.unique(x)) < 2:
        return math.nan
    return float(np.polyfit(x, y, 1)[0])


def _safeguard_nodes(family: FoolingFamily, z: Array) -> Array:
    """Maximizer plus a 3^d stencil inside the pulled-back support cube, clipped to [0,1]^d."""
    x0 = family.maximizer(z)
    h = 0.5 / (family.base.C1 * family.M)
    stencil = np.array(list(itertools.product((-h, 0.0, h), repeat=family.d)))
    return np.clip(x0 + stencil, 0.0, 1.0)


def member_error(
    family: FoolingFamily,
    z: Array,
    target: Callable[[Array], Array],
    reconstruction: Callable[[Array], Array],
    p: PValue,
    quadrature: QuadratureSpec | None = None,
) -> float:
    """L^p([0,1]^d) error of a reconstruction against one family member.

    For p = inf the sup is taken over the known maximizer and a small stencil
    around it (a lower estimate of the true sup, which is what the floor needs).
    """
    if p is INF:
        x = _safeguard_nodes(family, z)
        return float(np.max(np.abs(target(x) - reconstruction(x))))
    q = quadrature or default_quadrature(family.d)
    return lp_distance(target, reconstruction, p, q)


LearnerFactory = Callable[[int, int, FoolingFamily], object]


def run_experiment(
    variant: str,
    base: BiLipschitzMap,
    learner: LearnerFactory,
    p: PValue,
    m_list: Iterable[int],
    n_seeds: int,
    learner_name: str | None = None,
    quadrature: QuadratureSpec | None = None,
) -> ExperimentReport:
    """Attack a learner with the fooling family for every (m, seed).

    ``learner(m, seed, family)`` must return an object with ``run(target)``
    giving ``.trace`` and ``.reconstruction``.  The learner is run on every
    family member; for surviving centres its trace must coincide with the
    trace on the base map.
    """
    _check_variant(variant)
    p = parse_p(p)
    name = learner_name or getattr(learner, "__name__", "learner")
    d = base.d
    rows: list[ReportRow] = []
    indistinguishable = True
    floor_respected = True
    for m in sorted(set(int(m) for m in m_list)):
        family = build_family(variant, m, base)
        grid = family.grid
        C = lower_bound_constant(d, p, base.C1, base.C2)
        bound = lower_bound_value(variant, d, p, m, base.C1, base.C2)
        for seed in range(n_seeds):
            algo = learner(m, seed, family)
            trace0 = algo.run(base.forward).trace
            keep = filter_mask(grid, trace0)
            floor = guaranteed_floor(family, trace0)
            errors = []
            for zi, z in enumerate(grid.gamma):
                for v in (1, -1):
                    target = family.member(z, v)
                    result = algo.run(target)
                    if keep[zi] and result.trace.max_deviation(trace0) > 1e-15:
                        indistinguishable = False
                    errors.append(member_error(family, z, target, result.reconstruction, p, quadrature))
            errors = np.asarray(errors)
            survivors = np.repeat(keep, 2)
            # the fit learner lands exactly on the floor; allow rounding in the last bit
            if p is INF and np.max(errors[survivors]) < floor - FLOOR_ATOL:
                floor_respected = False
            rows.append(
                ReportRow(variant, d, format_p(p), m, name, seed, trace0.n, grid.size, int(keep.sum()),
                          floor, float(errors.max()), float(errors.mean()), C, bound)
            )
    rows.sort(key=ReportRow.sort_key)
    summary = summarize(rows)
    checks = {"indistinguishable": indistinguishable, "floor_respected": floor_respected}
    return ExperimentReport(rows, summary, checks)


def summarize(rows: Sequence[ReportRow]) -> list[ReportRow]:
    """One row per (variant, d, p, learner) holding the log-log slope of floor vs m in ``floor_c``."""
    groups: dict[tuple, dict[int, float]] = {}
    for r in rows:
        groups.setdefault((r.variant, r.d, r.p, r.learner), {})[r.m] = r.floor_c
    out = []
    for (variant, d, p, learner), floors in sorted(groups.items()):
        ms = sorted(floors)
        slope = fit_loglog_slope(ms, [floors[m] for m in ms])
        out.append(ReportRow(variant, d, p, None, SLOPE_PREFIX + learner, None, None, None, None,
                             slope, None, None, None, None))
    return out
