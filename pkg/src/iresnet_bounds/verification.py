"""Sampled property suites for the hat constructions, box bounds and adversary.

Each suite returns a :class:`SuiteResult` whose ``margin`` is the smallest
observed slack of the checked inequality (negative means violated).
Sampling can refute a property, never prove it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .adversary import (
    SampleTrace,
    audit_membership,
    build_family,
    build_grid,
    count_floor,
    filter_mask,
    fooling_pair,
)
from .base_maps import (
    Box,
    diagonal_affine_map,
    identity_map,
    image_box_bounds,
    iresnet_map,
    preimage_box_bounds,
)
from .core_nets import ResidualNetwork, invert_with_stats, resnet_forward
from .errors import IResNetBoundsError
from .hat import (
    HatParams,
    apply_shift,
    hat_as_fnn,
    hat_value,
    phi_as_cnn,
    phi_value,
    theta_block,
)
from .metrics import (
    QuadratureSpec,
    lipschitz_sample_estimate,
    lp_distance,
    pair_distance_bounds,
    sup_distance_fooling,
)


@dataclass
class SuiteResult:
    lemma: str
    status: str  # "pass" or "fail"
    margin: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        d = asdict(self)
        if not math.isfinite(d["margin"]):
            d["margin"] = None
        return d


@dataclass(frozen=True)
class VerifyConfig:
    d: int = 2
    seed: int = 0
    n_points: int = 10_000
    n_pairs: int = 100_000
    amplitude: float = 0.5  # c as a fraction of 1/(3dM)


def _result(lemma: str, margin: float, detail: str = "", tol: float = 0.0) -> SuiteResult:
    return SuiteResult(lemma, "pass" if margin >= -tol else "fail", float(margin) + 0.0, detail)


def random_params(d: int, rng: np.random.Generator, amplitude: float = 0.5, v: int | None = None) -> HatParams:
    M = float(rng.uniform(1.0, 8.0))
    c = amplitude / (3 * d * M)
    sign = int(rng.choice([-1, 1])) if v is None else v
    return HatParams(tuple(rng.uniform(0.0, 1.0, d)), M, c, sign)


def points_outside_cube(p: HatParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points of z + [-2/M, 2/M]^d pushed off the closed support cube."""
    x = p.zvec + rng.uniform(-2.0 / p.M, 2.0 / p.M, (n, p.d))
    axis = rng.integers(0, p.d, n)
    side = rng.choice([-1.0, 1.0], n)
    gap = rng.uniform(1e-9, 1.0 / p.M, n)
    x[np.arange(n), axis] = p.zvec[axis] + side * (1.0 / p.M + gap)
    return x


def suite_hat_support(cfg: VerifyConfig, rng) -> SuiteResult:
    p = random_params(cfg.d, rng, cfg.amplitude)
    outside = hat_value(points_outside_cube(p, cfg.n_points, rng), p)
    anywhere = hat_value(p.zvec + rng.uniform(-2 / p.M, 2 / p.M, (cfg.n_points, p.d)), p)
    margin = min(-float(np.max(np.abs(outside))), float(anywhere.min()), p.c - float(anywhere.max()))
    return _result("hat_support", margin, "zero off z+[-1/M,1/M]^d, 0 <= value <= c")


def suite_hat_lower(cfg: VerifyConfig, rng) -> SuiteResult:
    p = random_params(cfg.d, rng, cfg.amplitude)
    h = 1.0 / (2 * p.d * p.M)
    inner = hat_value(p.zvec + rng.uniform(-h, h, (cfg.n_points, p.d)), p)
    corner = hat_value(p.zvec + h, p)
    margin = min(float(inner.min()) - p.c / 2, 1e-12 - abs(corner - p.c / 2))
    return _result("hat_lower_bound", margin, "value >= c/2 on z+[-1/(2dM),1/(2dM)]^d")


def suite_hat_fnn(cfg: VerifyConfig, rng) -> SuiteResult:
    p = random_params(cfg.d, rng, cfg.amplitude)
    x = p.zvec + rng.uniform(-2 / p.M, 2 / p.M, (cfg.n_points, p.d))
    err = float(np.max(np.abs(hat_as_fnn(p)(x)[:, 0] - hat_value(x, p))))
    arch_ok = hat_as_fnn(p).architecture.dims == (p.d, 2 * p.d, 1, 1)
    return _result("hat_fnn_realization", (1e-9 - err) if arch_ok else -1.0, f"max |fnn - formula| = {err:.2e}")


def _box_of(p: HatParams, scale: float = 2.0):
    return p.zvec - scale / p.M, p.zvec + scale / p.M


def suite_hat_lipschitz(cfg: VerifyConfig, rng) -> SuiteResult:
    p = random_params(cfg.d, rng, cfg.amplitude)
    est = lipschitz_sample_estimate(lambda x: hat_value(x, p), *_box_of(p), cfg.n_pairs, int(rng.integers(1 << 31)))
    return _result("hat_lipschitz", p.lip_bound + 1e-9 - est, f"sampled {est:.4g} vs 3cdM = {p.lip_bound:.4g}")


def suite_theta(cfg: VerifyConfig, rng) -> SuiteResult:
    p = random_params(cfg.d, rng, cfg.amplitude)
    block = theta_block(p)
    x = p.zvec + rng.uniform(-2 / p.M, 2 / p.M, (cfg.n_points, p.d))
    out = block(x)
    norm_gap = float(np.max(np.abs(np.max(np.abs(out), axis=-1) - hat_value(x, p))))
    est = lipschitz_sample_estimate(block, *_box_of(p), cfg.n_pairs, int(rng.integers(1 << 31)))
    audit = audit_membership(block, "iresnet", p.d)
    margin = min(1e-12 - norm_gap, p.lip_bound + 1e-9 - est, 1.0 - p.lip_bound, 1.0 - audit.weight_sup)
    if not audit.architecture_ok:
        margin = -1.0
    return _result("theta_block", margin, f"arch {audit.architecture}, Lip bound {p.lip_bound:.3f}")


def suite_phi(cfg: VerifyConfig, rng) -> SuiteResult:
    d = max(cfg.d, 2)
    p = random_params(d, rng, cfg.amplitude)
    cnn = phi_as_cnn(p)
    x = p.zvec + rng.uniform(-2 / p.M, 2 / p.M, (cfg.n_points, d))
    val = phi_value(x, p)
    sup = np.max(np.abs(val), axis=-1)
    h = 1.0 / (2 * d * p.M)
    shifts = np.stack([apply_shift(p.zvec, i) for i in range(d)])
    near = shifts[rng.integers(0, d, cfg.n_points)] + rng.uniform(-h, h, (cfg.n_points, d))
    lower = float(np.max(np.abs(phi_value(near, p)), axis=-1).min())
    equiv = float(np.max(np.abs(phi_value(apply_shift(x, 1), p) - apply_shift(val, 1))))
    cnn_equiv = float(np.max(np.abs(cnn(apply_shift(x, 1)) - apply_shift(cnn(x), 1))))
    agree = float(np.max(np.abs(cnn(x) - val)))
    est = lipschitz_sample_estimate(lambda y: phi_value(y, p), *_box_of(p), cfg.n_pairs, int(rng.integers(1 << 31)))
    margin = min(
        p.c - float(sup.max()),
        lower - p.c / 2,
        1e-12 - equiv,
        1e-12 - cnn_equiv,
        1e-9 - agree,
        p.lip_bound + 1e-9 - est,
    )
    return _result("phi_block", margin, f"cnn agreement {agree:.1e}, equivariance {max(equiv, cnn_equiv):.1e}")


def _test_maps(d: int, rng):
    p = random_params(d, rng, 0.6)
    p = HatParams(tuple(np.full(d, 0.5)), p.M, p.c, p.v)
    return [
        identity_map(d),
        diagonal_affine_map(rng.uniform(0.5, 2.0, d), rng.uniform(-0.2, 0.2, d)),
        iresnet_map(ResidualNetwork((theta_block(p),)), d),
    ]


def suite_preimage_box(cfg: VerifyConfig, rng) -> SuiteResult:
    margin = math.inf
    for f in _test_maps(cfg.d, rng):
        x = rng.uniform(0, 1, cfg.d)
        D = float(rng.uniform(0.05, 0.5))
        inner, outer = preimage_box_bounds(f, x, D)
        V = Box(f.forward(x), D)
        pts = inner.sample(1000, rng)
        slack_in = D - np.max(np.abs(f.forward(pts) - V.center), axis=-1)
        pre = f.inverse(V.sample(1000, rng))
        slack_out = outer.half - np.max(np.abs(pre - x), axis=-1)
        margin = min(margin, float(slack_in.min()), float(slack_out.min()))
    return _result("preimage_box", margin, "x+[-D/C1,D/C1]^d maps into V; f^-1(V) stays in x+[-C2 D,C2 D]^d", tol=1e-9)


def suite_image_box(cfg: VerifyConfig, rng) -> SuiteResult:
    margin = math.inf
    for f in _test_maps(cfg.d, rng):
        x = rng.uniform(0, 1, cfg.d)
        D = float(rng.uniform(0.05, 0.5))
        inner, outer = image_box_bounds(f, x, D)
        V = Box(x, D)
        pre = f.inverse(inner.sample(1000, rng))
        slack_in = D - np.max(np.abs(pre - x), axis=-1)
        img = f.forward(V.sample(1000, rng))
        slack_out = outer.half - np.max(np.abs(img - outer.center), axis=-1)
        margin = min(margin, float(slack_in.min()), float(slack_out.min()))
    return _result("image_box", margin, "f(x)+[-D/C2,D/C2]^d inside f(V) inside f(x)+[-C1 D,C1 D]^d", tol=1e-9)


def _pair_suite(variant: str, cfg: VerifyConfig, rng) -> SuiteResult:
    margin = math.inf
    for d in (1, 2):
        if variant == "conv" and d == 1:
            continue
        base = identity_map(d)
        family = build_family(variant, 2, base)
        z = family.grid.gamma[int(rng.integers(family.grid.size))]
        pair = fooling_pair(family, z)
        sup = sup_distance_fooling(pair, base)
        margin = min(margin, 1e-10 - abs(sup - 2 * family.c))
        q = QuadratureSpec("tensor_midpoint", {1: 4096, 2: 256}[d], (0.0,) * d, (1.0,) * d)
        for p in (1.0, 2.0):
            dist = lp_distance(pair.plus, pair.minus, p, q)
            lo, hi = pair_distance_bounds(d, p, base.C1, base.C2, family.M, family.c, variant)
            margin = min(margin, (dist - 0.99 * lo) / lo, (1.01 * hi - dist) / hi)
    name = "pair_distance" if variant == "iresnet" else "conv_pair_distance"
    return _result(name, margin, "lower <= ||f+ - f-||_p <= upper; sup distance = 2c")


def suite_grid_counts(cfg: VerifyConfig, rng) -> SuiteResult:
    margin = math.inf
    for variant in ("iresnet", "conv"):
        for d in (1, 2, 3):
            for m in (1, 2, 5, 17, 40):
                grid = build_grid(variant, m, identity_map(d))
                target = 3 * m if variant == "iresnet" else 3 * d * m
                margin = min(margin, grid.size - target, 2**d * target - grid.size)
                n = int(rng.integers(0, 2 * m + 1))
                trace = SampleTrace.record(grid.base.forward, rng.uniform(0, 1, (n, d)))
                survivors = int(filter_mask(grid, trace).sum())
                need = m if variant == "iresnet" else d * m
                margin = min(margin, survivors - count_floor(grid, n), survivors - need)
    return _result("grid_counts", float(margin), "3m <= #grid <= 2^d 3m and #filtered >= m (conv: with 3dm, dm)")


def suite_membership(cfg: VerifyConfig, rng) -> SuiteResult:
    margin = math.inf
    for variant in ("iresnet", "conv"):
        d = max(cfg.d, 2) if variant == "conv" else cfg.d
        family = build_family(variant, int(rng.integers(1, 50)), identity_map(d))
        for z in family.grid.gamma[:5]:
            audit = audit_membership(family.block(z, 1), variant, d)
            m = min(1.0 - audit.weight_sup, 1.0 - audit.lip_bound)
            margin = min(margin, m if audit.architecture_ok else -1.0)
    return _result("membership", margin, "architecture, weight sup <= 1, Lip < 1")


def suite_inversion(cfg: VerifyConfig, rng) -> SuiteResult:
    worst = 0.0
    for _ in range(10):
        L = int(rng.integers(1, 9))
        blocks = [theta_block(random_params(cfg.d, rng, cfg.amplitude)) for _ in range(L)]
        net = ResidualNetwork(blocks)
        x = rng.uniform(0, 1, (50, cfg.d))
        back = invert_with_stats(net, resnet_forward(net, x), 1e-10).x
        worst = max(worst, float(np.max(np.abs(back - x))))
    return _result("inversion", 1e-8 - worst, f"max roundtrip error {worst:.2e}")


SUITES: list[Callable[[VerifyConfig, np.random.Generator], SuiteResult]] = [
    suite_hat_support,
    suite_hat_lower,
    suite_hat_fnn,
    suite_hat_lipschitz,
    suite_theta,
    suite_phi,
    suite_preimage_box,
    suite_image_box,
    lambda cfg, rng: _pair_suite("iresnet", cfg, rng),
    lambda cfg, rng: _pair_suite("conv", cfg, rng),
    suite_grid_counts,
    suite_membership,
    suite_inversion,
]


SUITE_NAMES = [
    "hat_support", "hat_lower_bound", "hat_fnn_realization", "hat_lipschitz", "theta_block", "phi_block",
    "preimage_box", "image_box", "pair_distance", "conv_pair_distance", "grid_counts", "membership", "inversion",
]


def run_all(cfg: VerifyConfig = VerifyConfig()) -> list[SuiteResult]:
    results = []
    for i, suite in enumerate(SUITES):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, i]))
        try:
            results.append(suite(cfg, rng))
        except IResNetBoundsError as exc:
            name = SUITE_NAMES[i]
            results.append(SuiteResult(name, "fail", math.nan, f"{type(exc).__name__}: {exc}"))
    return results


def check_indistinguishable(family, z, trace: SampleTrace) -> float:
    """Largest gap between a family member and the base map on the trace points."""
    gaps = [np.max(np.abs(family.member(z, v)(trace.points) - family.base.forward(trace.points)), initial=0.0)
            for v in (1, -1)]
    return float(max(gaps))

