"""Command-line front end.

Subcommands analyze, gamma, flow, loja, and repair parse a polynomial,
run the corresponding library pipeline over an axis-aligned box, and
emit a JSON report (or trajectory CSV files for the flow command).  All
randomness descends from the single --seed value, so identical configs
produce byte-identical output.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, replace

import numpy as np

from .poly import Poly4, parse_poly, format_poly
from .varieties import (
    Box,
    TraceOptions,
    EmptyVariety,
    RankDeficiency,
    ComponentBoundExceeded,
    REFINE_TOL,
    RANK_TOL,
    FIBER_TOL,
    sample_Vf,
    trace_gamma,
    classify_component,
)
from .genericity import (
    CertifyOptions,
    RepairOptions,
    CLAIM_TOL,
    certify,
    repair_loop,
    NoAdmissiblePoint,
    HypothesisFailure,
    Stalled,
)
from . import flow as flowmod

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    """Everything a subcommand needs, already validated."""

    poly: Poly4
    poly_text: str
    box: Box
    grid: int = 6
    seeds: int = 8
    seed: int = 0
    tol_refine: float = REFINE_TOL
    tol_rank: float = RANK_TOL
    tol_claim: float = CLAIM_TOL
    tol_fiber: float = FIBER_TOL
    collar: float = 1e-3
    gamma0: float = 1e-2
    out: str | None = None
    fmt: str = "json"


class ConfigError(ValueError):
    pass


def _parse_box(text: str) -> Box:
    parts = text.split(",")
    if len(parts) != 8:
        raise ConfigError("--box needs 8 comma-separated reals a1,b1,...,a4,b4")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"bad box entry: {exc}") from None
    lo = tuple(vals[0::2])
    hi = tuple(vals[1::2])
    try:
        return Box(lo, hi)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _load_config(args: argparse.Namespace) -> RunConfig:
    if args.poly is not None:
        text = args.poly
    else:
        with open(args.poly_file, "r", encoding="utf-8") as fh:
            text = fh.read()
    try:
        f = parse_poly(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse polynomial: {exc}") from None
    for name in ("tol_refine", "tol_rank", "tol_claim", "tol_fiber", "collar", "gamma0"):
        if not getattr(args, name) > 0:
            raise ConfigError(f"--{name.replace('_', '-')} must be positive")
    if args.grid < 2:
        raise ConfigError("--grid must be at least 2")
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    return RunConfig(
        poly=f,
        poly_text=format_poly(f),
        box=_parse_box(args.box),
        grid=args.grid,
        seeds=args.seeds,
        seed=args.seed,
        tol_refine=args.tol_refine,
        tol_rank=args.tol_rank,
        tol_claim=args.tol_claim,
        tol_fiber=args.tol_fiber,
        collar=args.collar,
        gamma0=args.gamma0,
        out=args.out,
        fmt=args.format,
    )


def _clean(obj):
    """Make a structure JSON-safe: numpy scalars to Python, non-finite to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _base_report(cfg: RunConfig) -> dict:
    box_flat = []
    for lo, hi in zip(cfg.box.lower, cfg.box.upper):
        box_flat.extend([lo, hi])
    return {
        "schema_version": SCHEMA_VERSION,
        "polynomial": cfg.poly_text,
        "box": box_flat,
        "certificates": None,
        "gamma": None,
        "loja": None,
        "flows": [],
    }


def _emit(cfg: RunConfig, report: dict) -> None:
    text = json.dumps(_clean(report), sort_keys=True, indent=2, allow_nan=False) + "\n"
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _component_dict(idx, comp, with_polyline=False) -> dict:
    scores = comp.tangency_scores
    d = {
        "index": idx,
        "classification": comp.classification,
        "horizontal": comp.horizontal_flag,
        "closed": comp.closed,
        "exits_box": comp.exits_box,
        "n_points": int(len(comp.polyline)),
        "arc_length": comp.arc_length(),
        "f_min": float(comp.f_range[0]),
        "f_max": float(comp.f_range[1]),
        "max_abs_tangency": float(np.max(np.abs(scores))) if len(scores) else None,
    }
    if with_polyline:
        d["polyline"] = comp.polyline
    return d


def _trace_opts(cfg: RunConfig) -> TraceOptions:
    return TraceOptions(
        grid_res=cfg.grid, refine_tol=cfg.tol_refine, rank_tol=cfg.tol_rank
    )


def _classified_gamma(cfg: RunConfig):
    comps = trace_gamma(cfg.poly, cfg.box, _trace_opts(cfg))
    return [classify_component(cfg.poly, c, fiber_tol=cfg.tol_fiber) for c in comps]


def _loja_dict(est) -> dict:
    return {
        "C1": est.C1,
        "C2": est.C2,
        "argmin": list(est.argmin),
        "argmax": list(est.argmax),
        "collar_radius": est.collar_radius,
        "sample_count": est.sample_count,
    }


def cmd_analyze(cfg: RunConfig) -> int:
    opts = CertifyOptions(
        grid_res=cfg.grid,
        refine_tol=cfg.tol_refine,
        rank_tol=cfg.tol_rank,
        fiber_tol=cfg.tol_fiber,
    )
    rep = certify(cfg.poly, cfg.box, opts)
    report = _base_report(cfg)
    report["certificates"] = rep.to_dict()
    _emit(cfg, report)
    return 0 if rep.all_pass() else 2


def cmd_gamma(cfg: RunConfig) -> int:
    comps = _classified_gamma(cfg)
    report = _base_report(cfg)
    report["gamma"] = [_component_dict(i, c, with_polyline=True) for i, c in enumerate(comps)]
    _emit(cfg, report)
    return 0


def cmd_loja(cfg: RunConfig) -> int:
    sample = sample_Vf(cfg.poly, cfg.box, cfg.grid, cfg.tol_refine)
    est = flowmod.estimate_loja(
        cfg.poly, cfg.box, sample, collar=cfg.collar, seed=cfg.seed
    )
    report = _base_report(cfg)
    report["loja"] = _loja_dict(est)
    _emit(cfg, report)
    return 0


def cmd_flow(cfg: RunConfig) -> int:
    fcfg = flowmod.FlowConfig(sample_grid_res=cfg.grid)
    sample = sample_Vf(cfg.poly, cfg.box, cfg.grid, cfg.tol_refine)
    comps = _classified_gamma(cfg)
    if cfg.fmt == "csv":
        return _flow_csv(cfg, fcfg, sample)
    est = None
    if len(sample):
        est = flowmod.estimate_loja(
            cfg.poly, cfg.box, sample, collar=cfg.collar, seed=cfg.seed
        )
    batch = flowmod.batch_flow(
        cfg.poly,
        cfg.box,
        cfg.seeds,
        fcfg,
        sample=sample,
        gamma=comps,
        loja=est,
        seed=cfg.seed,
    )
    report = _base_report(cfg)
    report["gamma"] = [_component_dict(i, c) for i, c in enumerate(comps)]
    if est is not None:
        report["loja"] = _loja_dict(est)
    report["flows"] = batch.records
    _emit(cfg, report)
    return 0


def _flow_csv(cfg: RunConfig, fcfg, sample) -> int:
    # one file per trajectory; --out names the directory
    if not cfg.out:
        raise ConfigError("--format csv needs --out pointing at a directory")
    import os

    os.makedirs(cfg.out, exist_ok=True)
    starts = flowmod.kronecker_points(cfg.box, cfg.seeds, offset=cfg.seed * 104729)
    for si, row in enumerate(starts):
        x0 = tuple(float(v) for v in row)
        for direction in ("descent", "ascent"):
            traj = flowmod.integrate(
                cfg.poly, x0, cfg.box, replace(fcfg, direction=direction), sample=sample
            )
            if traj.termination == "MaxTime":
                retry = replace(fcfg, direction=direction, t_max=2.0 * fcfg.t_max)
                traj = flowmod.integrate(cfg.poly, x0, cfg.box, retry, sample=sample)
            path = os.path.join(cfg.out, f"traj_{si:03d}_{direction}.csv")
            traj.to_csv(path)
    return 0


def cmd_repair(cfg: RunConfig) -> int:
    opts = RepairOptions(
        seed=cfg.seed,
        certify=CertifyOptions(
            grid_res=cfg.grid,
            refine_tol=cfg.tol_refine,
            rank_tol=cfg.tol_rank,
            fiber_tol=cfg.tol_fiber,
        ),
    )
    repaired, log = repair_loop(cfg.poly, cfg.box, gamma0=cfg.gamma0, opts=opts)
    out_text = format_poly(repaired)
    report = _base_report(cfg)
    report["polynomial"] = out_text
    report["repair"] = {
        "input_polynomial": cfg.poly_text,
        "output_polynomial": out_text,
        "changed": out_text != cfg.poly_text,
        "log": log,
    }
    _emit(cfg, report)
    summary = log[-1] if log else {}
    kappa = summary.get("kappa_final")
    return 0 if kappa == 0 else 2


_COMMANDS = {
    "analyze": cmd_analyze,
    "gamma": cmd_gamma,
    "flow": cmd_flow,
    "loja": cmd_loja,
    "repair": cmd_repair,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group(required=True)
    src.add_argument("--poly", help="polynomial in the variables x1..x4")
    src.add_argument("--poly-file", help="file holding the polynomial text")
    common.add_argument(
        "--box",
        default="-2,2,-2,2,-2,2,-2,2",
        help="bounds a1,b1,a2,b2,a3,b3,a4,b4 (default [-2,2]^4)",
    )
    common.add_argument("--grid", type=int, default=6, help="seed grid resolution per axis")
    common.add_argument("--seeds", type=int, default=8, help="number of flow start points")
    common.add_argument("--seed", type=int, default=0, help="master random seed")
    common.add_argument("--tol-refine", type=float, default=REFINE_TOL)
    common.add_argument("--tol-rank", type=float, default=RANK_TOL)
    common.add_argument("--tol-claim", type=float, default=CLAIM_TOL)
    common.add_argument("--tol-fiber", type=float, default=FIBER_TOL)
    common.add_argument("--collar", type=float, default=1e-3)
    common.add_argument("--gamma0", type=float, default=1e-2)
    common.add_argument("--out", help="output path (directory for --format csv)")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    parser = argparse.ArgumentParser(
        prog="engelflow",
        description="Horizontal-gradient geometry of polynomials on R^4.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="run every genericity certificate")
    sub.add_parser("gamma", parents=[common], help="trace and classify the degeneracy curve")
    sub.add_parser("flow", parents=[common], help="integrate horizontal-gradient trajectories")
    sub.add_parser("loja", parents=[common], help="estimate the two-sided gradient bounds")
    sub.add_parser("repair", parents=[common], help="perturb away fiber-contained components")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse reserves 2 for usage errors; here 2 means a failed
        # certificate, so remap while keeping 0 for --help
        return 0 if exc.code == 0 else 1
    if args.command != "flow" and args.format == "csv":
        print("error: --format csv is only available for the flow command", file=sys.stderr)
        return 1
    try:
        cfg = _load_config(args)
        return _COMMANDS[args.command](cfg)
    except (
        ConfigError,
        EmptyVariety,
        RankDeficiency,
        ComponentBoundExceeded,
        NoAdmissiblePoint,
        HypothesisFailure,
        Stalled,
        OSError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
