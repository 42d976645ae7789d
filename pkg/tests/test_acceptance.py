"""Acceptance criteria 1-8, one test each; every test records a pass/fail line."""

import dataclasses
import math
import time

import numpy as np
import pytest

from lfodamp import modal
from lfodamp.numerics import heun_step
from lfodamp.scenarios.config import STRATEGIES, Analysis, default_config
from lfodamp.scenarios.runner import (envelope_slope, run_scenario, settling_time,
                                      write_comparison, compare_all)
from lfodamp.scenarios.system import Simulator, build_two_area

pytestmark = pytest.mark.slow

#: (real, imag, published damping %) per strategy, ranked as published
TABLE_I = {
    "PSS": (-0.781214, 5.84032, 13.3),
    "GFM_VSM": (-0.676476, 5.34967, 12.5),
    "REGFM": (-0.637492, 5.36776, 11.8),
    "GFM_Droop": (-0.629683, 5.29911, 11.8),
    "GFL_POD_Q": (-0.631767, 5.39000, 11.6),
    "GFL_POD_P": (-0.631503, 5.90218, 10.6),
    "NO_PSS": (-0.263220, 5.34158, 4.9),
}


def test_c1_damping_ratio_reproduces_table(record_criterion):
    errs = {k: abs(100 * modal.damping_ratio(s, w) - z) for k, (s, w, z) in TABLE_I.items()}
    worst = max(errs, key=errs.get)
    ok = all(e <= 0.1 for e in errs.values())
    record_criterion(1, ok, f"max |zeta - published| = {errs[worst]:.3f} pp ({worst})")
    assert ok


def _two_mode(t):
    return (1.0 * np.exp(-0.3 * t) * np.cos(5.5 * t + 0.3)
            + 0.4 * np.exp(-0.8 * t) * np.cos(8.0 * t - 1.0))


def test_c2_prony_oracle(record_criterion):
    t0 = time.perf_counter()
    # noiseless: both modes at 1e-6 relative error
    dt = 0.01
    t = np.arange(0, 10 + 1e-9, dt)
    modes = sorted(modal.prony(_two_mode(t), dt, 4), key=lambda m: m.omega)
    truth = [(-0.3, 5.5), (-0.8, 8.0)]
    exact_err = max(max(abs(m.sigma - s) / abs(s), abs(m.omega - w) / w)
                    for m, (s, w) in zip(modes, truth))

    # 40 dB SNR at the analysis rate and order used for every run
    a = Analysis()
    dt = 1.0 / a.prony_rate
    t = np.arange(0, a.length + 1e-9, dt)
    clean = _two_mode(t)
    sigma_n = math.sqrt(np.mean(clean ** 2) / 10 ** (40 / 10))
    hits = 0
    for seed in range(50):
        y = clean + np.random.default_rng(seed).normal(0.0, sigma_n, t.size)
        m = modal.dominant_mode(modal.prony(y, dt, a.order), a.f_lo, a.f_hi)
        hits += abs(m.sigma + 0.3) <= 0.05 * 0.3 and abs(m.omega - 5.5) <= 0.05 * 5.5
    wall = time.perf_counter() - t0
    ok = exact_err < 1e-6 and hits >= 45 and wall < 5.0
    record_criterion(2, ok, f"noiseless rel err {exact_err:.1e}; 40 dB: {hits}/50 within 5%; {wall:.2f} s")
    assert ok


def test_c3_marginal_baseline(marginal, comparison, record_criterion):
    scale, curve, wall = marginal
    mode = comparison[0].results["no_pss"].mode
    ok = 0.04 <= mode.zeta <= 0.06 and 0.7 <= mode.freq_hz <= 1.1 and wall < 120.0
    record_criterion(3, ok, f"tie_scale {scale:.4g}: zeta {100 * mode.zeta:.2f}%, "
                            f"{mode.freq_hz:.3f} Hz, search {wall:.1f} s ({len(curve)} runs)")
    assert ok


def test_c4_strategy_ordering(marginal, comparison, record_criterion):
    cmp, wall = comparison
    z = {r.strategy: r.zeta_pct for r in cmp.rows}
    total = wall + marginal[2]
    ok = (not cmp.failures and len(z) == 7
          and z["PSS"] == max(z.values()) and z["NO_PSS"] == min(z.values())
          and z["GFM_VSM"] > z["GFL_POD_P"] and z["GFM_VSM"] >= z["GFM_Droop"] and total < 300.0)
    order = " > ".join(f"{k} {v:.2f}" for k, v in z.items())
    record_criterion(4, ok, f"{order}; {total:.1f} s")
    assert ok


def test_c5_fault_response_shape(comparison, record_criterion):
    cmp, _ = comparison
    slopes = {}
    for name, res in cmp.results.items():
        t, y = res.window()
        slopes[name] = envelope_slope(t, y)
    damped = [n for n in STRATEGIES if n != "no_pss"]
    base_zeta = cmp.results["no_pss"].mode.zeta
    ok = all(slopes[n] < 0 for n in damped) and base_zeta < 0.06
    worst = max(damped, key=slopes.get)
    record_criterion(5, ok, f"max damped envelope slope {slopes[worst]:.3f}/s ({worst}); "
                            f"no-PSS zeta {100 * base_zeta:.2f}%")
    assert ok


@pytest.fixture(scope="module")
def load_steps(marginal):
    out = {}
    for name in ("no_pss", "pss", "gfm_vsm"):
        cfg = default_config(name, tie_scale=marginal[0])
        cfg = cfg.replace(disturbance=dataclasses.replace(cfg.disturbance, kind="load_step"))
        out[name] = settling_time(run_scenario(cfg))
    return out


def test_c6_load_step_settling(load_steps, record_criterion):
    ts = load_steps
    faster = ts["gfm_vsm"] <= 0.5 * ts["no_pss"]
    rivals = ts["gfm_vsm"] <= 1.25 * ts["pss"]
    record_criterion(6, faster and rivals,
                     f"settling VSM {ts['gfm_vsm']:.2f} s, no-PSS {ts['no_pss']:.2f} s "
                     f"(2x faster: {faster}), PSS {ts['pss']:.2f} s (within 25%: {rivals})")
    assert faster and rivals


def _flat_hold(strategy, seconds=10.0):
    cfg = default_config(strategy, t_end=seconds)
    cfg = cfg.replace(disturbance=dataclasses.replace(cfg.disturbance, kind="none"))
    sim = Simulator(build_two_area(cfg), cfg)
    x = sim.x0.copy()
    worst = 0.0
    for _ in range(int(round(seconds / cfg.dt))):
        worst = max(worst, float(np.max(np.abs(sim.derivatives(x)))))
        x = sim.step(x)
    return worst


def _heun_order():
    errs = []
    for n in (10, 20):
        x = 1.0
        for _ in range(n):
            x = heun_step(x, lambda y: -y, 1.0 / n)
        errs.append(abs(x - math.exp(-1.0)))
    return errs[0] / errs[1]


def test_c7_numerical_hygiene(comparison, record_criterion):
    cmp, _ = comparison
    holds = {s: _flat_hold(s) for s in STRATEGIES}
    balance = max(r.max_balance for r in cmp.results.values())
    violations = sum(len(r.violations) for r in cmp.results.values())
    factor = _heun_order()
    ok = (max(holds.values()) < 1e-6 and balance < 1e-6 and 3.5 <= factor <= 4.5 and violations == 0)
    record_criterion(7, ok, f"flat-start max |dx/dt| {max(holds.values()):.1e}; balance {balance:.1e} pu; "
                            f"Heun factor {factor:.3f}; limit violations {violations}")
    assert ok


def test_c8_determinism(tmp_path, marginal, record_criterion):
    names = ("gfl_pod_q", "gfm_vsm")
    digests = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        write_comparison(compare_all(names, tie_scale=marginal[0]), out)
        digests.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    ok = digests[0] == digests[1] and len(digests[0]) == len(names) + 2
    record_criterion(8, ok, f"{len(digests[0])} files byte-identical across two runs: {ok}")
    assert ok
