"""Command-line entry point: simulate, compare, marginal and prony."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import modal
from .network import PowerFlowDiverged
from .scenarios.config import STRATEGIES, ConfigError, ScenarioConfig, default_config, load_config
from .scenarios.runner import (MarginalNotFound, compare_all, find_marginal_tie_scale, report_text,
                               run_scenario, write_comparison, write_run)
from .scenarios.system import InitializationError



def _base(path: str | None) -> ScenarioConfig:
    return load_config(path) if path else default_config()


def _strategies(text: str) -> list[str]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in names if s not in STRATEGIES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown strategies {bad}; choose from {', '.join(STRATEGIES)}")
    return names


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.strategy:
        cfg = cfg.replace(strategy=args.strategy)
    res = run_scenario(cfg)
    path = write_run(res, Path(args.out))
    print(f"{cfg.label}: {res.status} in {res.wall_time:.1f} s -> {path}")
    if res.mode is not None:
        m = res.mode
        print(f"dominant mode {m.sigma:.6f} ± j{m.omega:.5f} ({m.freq_hz:.3f} Hz, zeta {100 * m.zeta:.2f}%)")
    elif res.mode_error:
        print(f"no dominant mode: {res.mode_error}")
    return 0 if res.ok else 1


def cmd_compare(args) -> int:
    base = _base(args.config)
    cmp = compare_all(args.strategies, tie_scale=args.tie_scale, base=base)
    write_comparison(cmp, Path(args.out))
    sys.stdout.write(report_text(cmp))
    return 1 if cmp.failures else 0


def cmd_marginal(args) -> int:
    base = _base(args.config)
    try:
        scale, curve = find_marginal_tie_scale(base, target_zeta=args.target_zeta, tol=args.tol)
    except MarginalNotFound as exc:
        print(f"error: {exc}", file=sys.stderr)
        for s, z in exc.curve:
            print(f"  tie_scale {s:.5f}  zeta {100 * z:.2f}%", file=sys.stderr)
        return 1
    for s, z in curve:
        print(f"tie_scale {s:.5f}  zeta {100 * z:.2f}%")
    print(f"marginal tie_scale = {scale:.6g}")
    return 0


def read_channel(path: str | Path, channel: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    for name in ("t", channel):
        if name not in header:
            raise ValueError(f"{path}: no column {name!r} (have {', '.join(header)})")
    data = np.array(rows[1:], dtype=float)
    return data[:, header.index("t")], data[:, header.index(channel)]


def cmd_prony(args) -> int:
    t, y = read_channel(args.csv, args.channel)
    if len(t) < 2:
        raise ValueError("need at least two samples")
    mask = t >= args.t_start
    if args.length is not None:
        mask &= t <= args.t_start + args.length + 1e-9
    t, y = t[mask], y[mask]
    y, dt = modal.subsample(y, float(np.median(np.diff(t))), args.rate)
    modes = modal.prony(modal.detrend(y), dt, args.order)
    print(f"{'sigma':>12}  {'omega':>10}  {'f Hz':>7}  {'zeta %':>8}  {'amplitude':>10}")
    for m in modes:
        z = f"{100 * m.zeta:8.2f}" if m.omega > 0 else f"{'-':>8}"
        print(f"{m.sigma:12.6f}  {m.omega:10.5f}  {m.freq_hz:7.4f}  {z}  {m.amplitude:10.4g}")
    try:
        d = modal.dominant_mode(modes, args.f_lo, args.f_hi)
    except modal.NoModeInBand as exc:
        print(f"no dominant mode: {exc}")
        return 1
    print(f"dominant: {d.sigma:.6f} ± j{d.omega:.5f}, zeta {100 * d.zeta:.2f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lfodamp", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario and write its CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run several strategies at a shared tie scale")
    p.add_argument("--strategies", type=_strategies, default=list(STRATEGIES),
                   help="comma-separated subset of " + ", ".join(STRATEGIES))
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--tie-scale", type=float, help="skip the marginal search")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("marginal", help="find the tie scale giving the target no-PSS damping")
    p.add_argument("--target-zeta", type=float, default=0.05)
    p.add_argument("--tol", type=float, default=0.01)
    p.add_argument("--config")
    p.set_defaults(func=cmd_marginal)

    p = sub.add_parser("prony", help="Prony analysis of one CSV channel")
    p.add_argument("--csv", required=True)
    p.add_argument("--channel", default="tie_p")
    p.add_argument("--order", type=int, default=8)
    p.add_argument("--t-start", type=float, default=0.0)
    p.add_argument("--length", type=float)
    p.add_argument("--rate", type=float, default=10.0, help="subsample to about this rate, Hz")
    p.add_argument("--f-lo", type=float, default=0.2)
    p.add_argument("--f-hi", type=float, default=2.0)
    p.set_defaults(func=cmd_prony)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InitializationError, PowerFlowDiverged, modal.IllConditioned, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
