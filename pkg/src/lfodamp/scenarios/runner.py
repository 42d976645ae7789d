"""Run orchestration, marginal-stability search, comparison and persistence."""

from __future__ import annotations

import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..modal import (IllConditioned, Mode, NoModeInBand, RankRow, rank_strategies, ringdown_mode,
                     subsample)
from ..network import NetworkSolutionDiverged, PowerFlowDiverged
from ..numerics import NonFiniteDerivative
from .config import LABELS, STRATEGIES, ScenarioConfig, default_config
from .system import InitializationError, Simulator, build_two_area, flat_start_residual

log = logging.getLogger(__name__)

FLAT_START_TOL = 1e-6
BALANCE_TOL = 1e-6
COMPLETED = "completed"


class MarginalNotFound(RuntimeError):
    def __init__(self, message: str, curve: list[tuple[float, float]]):
        super().__init__(message)
        self.curve = curve


@dataclass
class RunResult:
    config: ScenarioConfig
    t: np.ndarray
    channels: dict[str, np.ndarray]
    mode: Mode | None
    wall_time: float
    status: str = COMPLETED
    flat_start: float = 0.0
    max_balance: float = 0.0
    violations: list[str] = field(default_factory=list)
    mode_error: str = ""

    @property
    def ok(self) -> bool:
        return self.status == COMPLETED

    @property
    def dt(self) -> float:
        return self.config.dt * self.config.decimate

    def window(self, channel: str = "tie_p") -> tuple[np.ndarray, np.ndarray]:
        """Samples of ``channel`` inside the modal-analysis window."""
        t0 = analysis_start(self.config)
        mask = (self.t >= t0 - 1e-9) & (self.t <= t0 + self.config.analysis.length + 1e-9)
        return self.t[mask], self.channels[channel][mask]


def analysis_start(cfg: ScenarioConfig) -> float:
    d = cfg.disturbance
    end = d.t_on + (round(d.duration / cfg.dt) * cfg.dt if d.kind == "fault" else 0.0)
    return end + cfg.analysis.delay


def run_scenario(cfg: ScenarioConfig, progress: Callable[[float], None] | None = None) -> RunResult:
    """Initialise, gate on a flat start, integrate to ``t_end`` and analyse the tie flow."""
    started = time.perf_counter()
    plant = build_two_area(cfg)
    sim = Simulator(plant, cfg)
    flat, v_err = flat_start_residual(sim)
    if flat >= FLAT_START_TOL or v_err >= FLAT_START_TOL:
        raise InitializationError(
            f"{cfg.strategy}: not at equilibrium before the disturbance "
            f"(max |dx/dt| = {flat:.3e}, max |V - V_pf| = {v_err:.3e})")

    n_steps = int(round(cfg.t_end / cfg.dt))
    events = {}
    for ev in sim.events():
        events.setdefault(ev.step, []).append(ev)
    names = sim.channel_names()
    rows = []
    times = []
    x = sim.x0.copy()
    sim.solve_network(x)
    rows.append(sim.sample(x))
    times.append(0.0)
    status = COMPLETED
    max_balance = sim.balance_residual(x)
    violations: list[str] = []
    for k in range(n_steps):
        for ev in events.get(k, ()):
            sim.apply(ev)
        try:
            x = sim.step(x)
        except (NonFiniteDerivative, NetworkSolutionDiverged) as exc:
            status = f"diverged({exc})"
            break
        max_balance = max(max_balance, sim.balance_residual(x))
        bad = sim.violations(x)
        if bad and len(violations) < 20:
            violations += [f"t={(k + 1) * cfg.dt:.4f}: {b}" for b in bad]
        if sim.rotor_separation(x) > math.pi:
            status = "diverged(loss of synchronism)"
            break
        if (k + 1) % cfg.decimate == 0:
            rows.append(sim.sample(x))
            times.append((k + 1) * cfg.dt)
        if progress and k % 240 == 0:
            progress((k + 1) / n_steps)

    data = np.array(rows)
    channels = {name: data[:, j] for j, name in enumerate(names)}
    result = RunResult(cfg, np.array(times), channels, None, 0.0, status, flat, max_balance, violations)
    if result.ok and cfg.disturbance.kind != "none":
        try:
            _, y = result.window()
            a = cfg.analysis
            y, dt = subsample(y, result.dt, a.prony_rate)
            result.mode = ringdown_mode(y, dt, a.order, a.f_lo, a.f_hi)
        except (NoModeInBand, IllConditioned, ValueError) as exc:
            result.mode_error = str(exc)
    elif cfg.disturbance.kind == "none":
        result.mode_error = "no disturbance"
    result.wall_time = time.perf_counter() - started
    return result


def envelope_slope(t: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log|peak| over the detrended signal's local extrema."""
    y = y - np.polyval(np.polyfit(t, y, 1), t)
    a = np.abs(y)
    peaks = [i for i in range(1, len(y) - 1) if a[i] >= a[i - 1] and a[i] > a[i + 1]
             and np.sign(y[i]) != 0]
    if len(peaks) < 3:
        raise ValueError("too few oscillation peaks for an envelope fit")
    tp, ap = t[peaks], a[peaks]
    return float(np.polyfit(tp, np.log(ap), 1)[0])


def settling_time(result: RunResult, channel: str = "tie_p", tail: float = 2.0) -> float:
    """Time after the disturbance until ``channel`` stays within the settle band.

    The final value is the mean of the last ``tail`` seconds. The band is
    ``analysis.settle_band`` times the load step size for a load step (the
    same absolute band for every strategy), and times the largest
    post-disturbance excursion from the final value otherwise. Returns ``inf`` if the signal is still outside the band
    during the tail itself.
    """
    cfg = result.config
    t, y = result.t, result.channels[channel]
    d = cfg.disturbance
    t_on = d.t_on
    final = float(np.mean(y[t >= t[-1] - tail]))
    if d.kind == "load_step":
        ref = abs(d.delta_mw)
    else:
        ref = float(np.max(np.abs(y[t >= t_on] - final)))
    band = cfg.analysis.settle_band * ref
    outside = np.nonzero((np.abs(y - final) > band) & (t >= t_on))[0]
    if outside.size == 0:
        return 0.0
    t_last = t[outside[-1]]
    if t_last >= t[-1] - tail:
        return math.inf
    return float(t_last - t_on)


# marginal search ---------------------------------------------------------------


def zeta_at(base: ScenarioConfig, tie_scale: float) -> tuple[float, Mode | None]:
    cfg = base.replace(tie_scale=tie_scale)
    try:
        res = run_scenario(cfg)
    except PowerFlowDiverged:
        return -math.inf, None
    if not res.ok or res.mode is None:
        return -math.inf, None
    return res.mode.zeta, res.mode


def find_marginal_tie_scale(base: ScenarioConfig | None = None, target_zeta: float = 0.05,
                            tol: float = 0.01, lo: float = 1.0, hi: float = 10.0,
                            max_iter: int = 12) -> tuple[float, list[tuple[float, float]]]:
    """Bisect the tie impedance multiplier until the no-PSS mode damping is within ``tol``.

    Damping falls as the tie weakens. Returns ``(tie_scale, curve)`` with
    ``curve`` the evaluated ``(tie_scale, zeta)`` points.
    """
    base = base or default_config("no_pss")
    if base.strategy != "no_pss":
        base = base.replace(strategy="no_pss")
    curve = []

    def f(s):
        z, _ = zeta_at(base, s)
        curve.append((s, z))
        log.info("tie_scale %.5f -> zeta %.4f", s, z)
        return z

    z_lo, z_hi = f(lo), f(hi)
    for s, z in ((lo, z_lo), (hi, z_hi)):
        if abs(z - target_zeta) <= tol:
            return s, curve
    if not (z_lo > target_zeta > z_hi):
        raise MarginalNotFound(
            f"bracket [{lo}, {hi}] does not straddle zeta={target_zeta}: "
            f"{z_lo:.4f} .. {z_hi:.4f}", curve)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        z = f(mid)
        if abs(z - target_zeta) <= tol * 0.5:
            return mid, curve
        if z > target_zeta:
            lo = mid
        else:
            hi = mid
    best = min(curve, key=lambda c: abs(c[1] - target_zeta))
    if abs(best[1] - target_zeta) <= tol:
        return best[0], curve
    raise MarginalNotFound(f"no tie_scale within {max_iter} bisections", curve)


# comparison ---------------------------------------------------------------------


@dataclass
class Comparison:
    tie_scale: float
    results: dict[str, RunResult]
    rows: list[RankRow]
    failures: dict[str, str]


def compare_all(strategies: Sequence[str] = STRATEGIES, tie_scale: float | None = None,
                base: ScenarioConfig | None = None) -> Comparison:
    base = base or default_config("no_pss")
    if tie_scale is None:
        tie_scale, _ = find_marginal_tie_scale(base)
    results, failures = {}, {}
    for name in strategies:
        cfg = base.replace(strategy=name, tie_scale=tie_scale)
        try:
            res = run_scenario(cfg)
        except (InitializationError, PowerFlowDiverged) as exc:
            failures[name] = str(exc)
            continue
        results[name] = res
        if not res.ok:
            failures[name] = res.status
        elif res.mode is None:
            failures[name] = res.mode_error
    modes = {LABELS[n]: r.mode for n, r in results.items() if r.mode is not None}
    rows = rank_strategies(modes) if modes else []
    return Comparison(tie_scale, results, rows, failures)


# persistence --------------------------------------------------------------------


def _fmt(v: float) -> str:
    return "%.9g" % v


def series_csv(result: RunResult) -> str:
    buf = io.StringIO()
    names = list(result.channels)
    buf.write(",".join(["t", *names]) + "\n")
    cols = [result.channels[n] for n in names]
    for i, t in enumerate(result.t):
        buf.write(",".join([_fmt(t), *(_fmt(c[i]) for c in cols)]) + "\n")
    return buf.getvalue()


def modes_csv(rows: Sequence[RankRow]) -> str:
    lines = ["strategy,sigma,omega,zeta"]
    lines += [f"{r.strategy},{_fmt(r.sigma)},{_fmt(r.omega)},{_fmt(r.zeta_pct / 100.0)}" for r in rows]
    return "\n".join(lines) + "\n"


def report_text(cmp: Comparison) -> str:
    lines = ["Ranked inter-area modes (tie-line active power, Bus 2 -> 3)",
             f"tie_scale = {_fmt(cmp.tie_scale)}", "",
             f"{'rank':>4}  {'strategy':<10}  {'real':>10}  {'imag':>10}  {'zeta %':>7}"]
    for i, r in enumerate(cmp.rows, 1):
        lines.append(f"{i:>4}  {r.strategy:<10}  {r.sigma:>10.6f}  {r.omega:>10.5f}  {r.zeta_pct:>7.2f}")
    if cmp.failures:
        lines += ["", "failed runs:"]
        lines += [f"  {LABELS.get(k, k)}: {v}" for k, v in sorted(cmp.failures.items())]
    return "\n".join(lines) + "\n"


def write_run(result: RunResult, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{result.config.strategy}.csv"
    path.write_text(series_csv(result))
    return path


def write_comparison(cmp: Comparison, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for res in cmp.results.values():
        write_run(res, out)
    (out / "report.txt").write_text(report_text(cmp))
    (out / "modes.csv").write_text(modes_csv(cmp.rows))
