"""Command-line driver: property suites, scaling experiments, fooling-set export, inversion demo.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 runtime, numerical or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from importlib import resources
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adversary import (
    VARIANTS,
    build_family,
    filter_mask,
    run_experiment,
)
from .base_maps import identity_map
from .core_nets import ResidualNetwork, invert_with_stats, resnet_forward
from .errors import IResNetBoundsError
from .hat import HatParams, phi_block, theta_block
from .learners import LEARNERS, make_learner
from .metrics import INF, default_quadrature, parse_p
from .verification import VerifyConfig, run_all

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("verify", "experiment", "foolingset", "invert")
DEFAULT_M = "4,16,64,256"
FAULT_AMPLITUDE = 1.2  # c = 1.2 / (3dM) breaks the Lipschitz cap of the blocks


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    variant: str = "iresnet"
    d: int = 2
    p: object = INF
    m_list: tuple[int, ...] = (4, 16, 64, 256)
    learner: str = "grid"
    seeds: int = 8
    out: str | None = None
    format: str = "csv"
    master_seed: int = 0

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.d < 1:
            raise ConfigError("--d must be >= 1")
        if not self.m_list:
            raise ConfigError("--m must list at least one sample budget")
        if any(m < 1 for m in self.m_list):
            raise ConfigError("every entry of --m must be >= 1")
        if self.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        if self.format not in ("csv", "json"):
            raise ConfigError("--format must be csv or json")


def parse_m_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"--m expects comma-separated integers, got {text!r}") from None


def _p_arg(text: str):
    try:
        return parse_p(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--variant", choices=VARIANTS, default="iresnet")
    common.add_argument("--d", type=int, default=2, help="input dimension (default 2)")
    common.add_argument("--p", type=_p_arg, default=INF, help="L^p exponent: 1, 2 or inf (default inf)")
    common.add_argument("--m", type=parse_m_list, default=parse_m_list(DEFAULT_M),
                        help=f"comma-separated sample budgets (default {DEFAULT_M})")
    common.add_argument("--learner", choices=LEARNERS, default="grid")
    common.add_argument("--seeds", type=int, default=8, help="seeds per budget (default 8)")
    common.add_argument("--master-seed", type=int, default=0)
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    parser = argparse.ArgumentParser(
        prog="iresnet-bounds",
        description="Lower-bound machinery for learning invertible residual networks from samples.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", parents=[common], help="run the property suites")
    v.add_argument("--amplitude", type=float, default=0.5,
                   help="hat amplitude as a fraction of the cap 1/(3dM) (default 0.5)")
    v.add_argument("--inject-fault", action="store_true",
                   help=f"use amplitude {FAULT_AMPLITUDE}, which must make the suites fail")

    sub.add_parser("experiment", parents=[common], help="attack a learner with the fooling family")

    f = sub.add_parser("foolingset", parents=[common], help="export one fooling family with evidence")
    f.add_argument("--seed", type=int, default=0, help="learner seed to trace (default 0)")

    i = sub.add_parser("invert", parents=[common], help="invert a random hat i-ResNet")
    i.add_argument("--blocks", type=int, default=4, help="number of residual blocks L (default 4)")
    i.add_argument("--amplitude", type=float, default=0.5,
                   help="hat amplitude as a fraction of the cap 1/(3dM) (default 0.5)")
    i.add_argument("--points", type=int, default=100)
    i.add_argument("--tol", type=float, default=1e-10)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        command=args.command,
        variant=args.variant,
        d=args.d,
        p=args.p,
        m_list=tuple(args.m),
        learner=args.learner,
        seeds=args.seeds,
        out=args.out,
        format=args.format,
        master_seed=args.master_seed,
    )


def load_schema(name: str) -> dict:
    """Shipped JSON schema: ``experiment_report``, ``verify_report``, ``foolingset`` or ``invert_report``."""
    text = resources.files(__package__).joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc.strerror or exc}") from exc


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_verify(cfg: RunConfig, amplitude: float = 0.5) -> tuple[int, list[dict]]:
    results = run_all(VerifyConfig(d=cfg.d, seed=cfg.master_seed, amplitude=amplitude))
    report = [r.to_dict() for r in results]
    emit_report = cfg.out is not None or cfg.format == "json"
    # keep stdout clean when the machine-readable report goes there
    human = sys.stderr if emit_report and cfg.out is None else sys.stdout
    for r in results:
        margin = "nan" if r.margin != r.margin else f"{r.margin:.3e}"
        print(f"{r.status.upper():4s}  {r.lemma:22s} margin={margin}  {r.detail}", file=human)
    if emit_report:
        if cfg.format == "json":
            text = _json_text({"suites": [{k: e[k] for k in ("lemma", "status", "margin")} for e in report]})
        else:
            text = _csv_text(("lemma", "status", "margin"),
                             [(e["lemma"], e["status"], "" if e["margin"] is None else repr(e["margin"]))
                              for e in report])
        _emit(text, cfg.out)
    status = EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY
    return status, report


def cmd_experiment(cfg: RunConfig):
    base = identity_map(cfg.d)
    quadrature = None if cfg.p is INF else default_quadrature(cfg.d, seed=cfg.master_seed)
    report = run_experiment(
        cfg.variant, base, make_learner(cfg.learner, cfg.master_seed), cfg.p, cfg.m_list, cfg.seeds,
        learner_name=cfg.learner, quadrature=quadrature,
    )
    _emit(report.to_json() if cfg.format == "json" else report.to_csv(), cfg.out)
    return report


def _chosen_centres(keep: np.ndarray, k: int = 3) -> list[int]:
    survivors = np.flatnonzero(keep)
    if survivors.size <= k:
        return survivors.tolist()
    picks = np.linspace(0, survivors.size - 1, k).round().astype(int)
    return survivors[picks].tolist()


def foolingset_document(cfg: RunConfig, seed: int = 0) -> dict:
    """Trace, grid, filtered grid and evidence for three surviving centres."""
    m = cfg.m_list[0]
    base = identity_map(cfg.d)
    family = build_family(cfg.variant, m, base)
    learner = make_learner(cfg.learner, cfg.master_seed)(m, seed, family)
    trace = learner.run(base.forward).trace
    keep = filter_mask(family.grid, trace)
    chosen = []
    for zi in _chosen_centres(keep):
        z = family.grid.gamma[zi]
        plus, minus = family.member(z, 1)(trace.points), family.member(z, -1)(trace.points)
        evidence = [
            {"point": trace.points[j].tolist(), "base": trace.values[j].tolist(),
             "plus": plus[j].tolist(), "minus": minus[j].tolist()}
            for j in range(trace.n)
        ]
        gap = max(float(np.max(np.abs(plus - trace.values), initial=0.0)),
                  float(np.max(np.abs(minus - trace.values), initial=0.0)))
        chosen.append({
            "index": zi,
            "params_plus": family.params(z, 1).to_dict(),
            "params_minus": family.params(z, -1).to_dict(),
            "max_gap": gap,
            "evidence": evidence,
        })
    return {
        "variant": cfg.variant, "d": cfg.d, "m": m, "learner": cfg.learner, "seed": seed,
        "M": family.M, "c": family.c,
        "trace": {"points": trace.points.tolist(), "values": trace.values.tolist()},
        "gamma": family.grid.gamma.tolist(),
        "filtered": family.grid.gamma[keep].tolist(),
        "chosen": chosen,
    }


def cmd_foolingset(cfg: RunConfig, seed: int = 0) -> dict:
    doc = foolingset_document(cfg, seed)
    if cfg.format == "json":
        text = _json_text(doc)
    else:
        rows = []
        for entry in doc["chosen"]:
            for j, ev in enumerate(entry["evidence"]):
                for k in range(cfg.d):
                    rows.append((entry["index"], j, k, repr(ev["point"][k]), repr(ev["base"][k]),
                                 repr(ev["plus"][k]), repr(ev["minus"][k])))
        text = _csv_text(("z_index", "sample", "coord", "x", "base", "plus", "minus"), rows)
    _emit(text, cfg.out)
    return doc


def random_hat_network(variant: str, d: int, blocks: int, amplitude: float, rng) -> ResidualNetwork:
    """L hat blocks with random centres in [0,1]^d, M in [1,8] and c = amplitude/(3dM)."""
    make = theta_block if variant == "iresnet" else phi_block
    out = []
    for _ in range(blocks):
        M = float(rng.uniform(1.0, 8.0))
        p = HatParams(tuple(rng.uniform(0.0, 1.0, d)), M, amplitude / (3 * d * M), int(rng.choice([-1, 1])))
        out.append(make(p))
    return ResidualNetwork(out)


def invert_report(cfg: RunConfig, blocks: int, amplitude: float, points: int, tol: float) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, 7]))
    net = random_hat_network(cfg.variant, cfg.d, blocks, amplitude, rng)
    x = rng.uniform(0.0, 1.0, (points, cfg.d))
    y = resnet_forward(net, x)
    result = invert_with_stats(net, y, tol)
    # invert_with_stats walks the blocks last to first
    iterations = list(reversed(result.iterations))
    residuals = [h[-1] for h in reversed(result.residuals)]
    return {
        "variant": cfg.variant, "d": cfg.d, "blocks": blocks, "amplitude": amplitude, "tol": tol,
        "lip_bounds": list(net.lip_bounds),
        "iterations": iterations,
        "block_residuals": residuals,
        "roundtrip_max": float(np.max(np.abs(result.x - x), initial=0.0)),
    }


def cmd_invert(cfg: RunConfig, blocks=4, amplitude=0.5, points=100, tol=1e-10) -> dict:
    if blocks < 0:
        raise ConfigError("--blocks must be >= 0")
    if points < 1:
        raise ConfigError("--points must be >= 1")
    rep = invert_report(cfg, blocks, amplitude, points, tol)
    print(f"blocks={blocks} d={cfg.d} roundtrip_max={rep['roundtrip_max']:.3e} "
          f"iterations={rep['iterations']}", file=sys.stderr)
    if cfg.format == "json":
        text = _json_text(rep)
    else:
        rows = [(k, repr(q), it, repr(r), repr(rep["roundtrip_max"]))
                for k, (q, it, r) in enumerate(zip(rep["lip_bounds"], rep["iterations"], rep["block_residuals"]))]
        text = _csv_text(("block", "lip_bound", "iterations", "residual", "roundtrip_max"), rows)
    _emit(text, cfg.out)
    return rep


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    try:
        cfg = config_from_args(args)
        if args.command == "verify":
            amp = FAULT_AMPLITUDE if args.inject_fault else args.amplitude
            return cmd_verify(cfg, amp)[0]
        if args.command == "experiment":
            cmd_experiment(cfg)
        elif args.command == "foolingset":
            cmd_foolingset(cfg, args.seed)
        else:
            cmd_invert(cfg, args.blocks, args.amplitude, args.points, args.tol)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IResNetBoundsError, ArithmeticError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
