import cmath
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lfodamp.machines import (ExciterParams, GovernorParams, PssParams, SyncMachineParams,
                              exciter_step, governor_step, pss_dual_input_step,
                              pss_frequency_response, pss_initial, saturation,
                              saturation_coefficients, sync_machine_derivatives, sync_machine_init,
                              sync_machine_norton)
from lfodamp.numerics import heun_step

V = 1.0 * cmath.exp(0.2j)
S = 0.8 + 0.2j


@pytest.fixture
def machine():
    p = SyncMachineParams(mva_base=100.0)
    x, efd, pm = sync_machine_init(p, V, S)
    return p, x, efd, pm


def test_equilibrium(machine):
    p, x, efd, pm = machine
    assert np.max(np.abs(sync_machine_derivatives(x, p, efd, pm, V))) < 1e-6
    assert pm == pytest.approx(S.real + p.Ra * abs(S / V) ** 2, abs=1e-9)


def test_pm_step_accelerates(machine):
    p, x, efd, pm = machine
    dx = sync_machine_derivatives(x, p, efd, pm + 0.1, V)
    assert dx[1] == pytest.approx(0.1 / (2 * p.H), rel=1e-9)


def test_norton_round_trip(machine):
    p, x, _, _ = machine
    i_src, y = sync_machine_norton(x, p)
    i_term = i_src - y * V
    assert abs(V * i_term.conjugate() - S) < 1e-8


def test_zero_flux_norton():
    i_src, _ = sync_machine_norton(np.zeros(6), SyncMachineParams())
    assert i_src == 0


def test_swing_without_speed_damping_is_bounded(machine):
    p, x0, efd, pm = machine
    p = SyncMachineParams(mva_base=100.0, D=0.0)
    x0 = x0.copy()
    x0[0] += 0.05
    ze = 0.3j  # machine behind a line to an infinite bus
    vinf = V - ze * (S / V).conjugate()

    def f(x):
        i_src, y = sync_machine_norton(x, p)
        v = (i_src + vinf / ze) / (y + 1 / ze)
        return sync_machine_derivatives(x, p, efd, pm, v)

    x, swing = x0, []
    for _ in range(int(5 / 0.005)):
        x = heun_step(x, f, 0.005)
        swing.append(x[0])
    dev = np.array(swing) - x0[0] + 0.05
    # the damper windings still dissipate, so expect bounded, non-growing swings
    crossings = np.count_nonzero(np.diff(np.sign(np.diff(dev))))
    assert crossings >= 6
    assert np.max(np.abs(dev)) < 0.1 and np.ptp(dev[-200:]) <= np.ptp(dev[:200])


def test_parameter_validation_and_base():
    with pytest.raises(ValueError):
        SyncMachineParams(Xdp=2.0)
    p = SyncMachineParams(mva_base=900.0).on_base(100.0)
    assert p.H == pytest.approx(6.5 * 9) and p.Xd == pytest.approx(1.8 / 9)


def test_saturation_curve():
    A, B = saturation_coefficients(0.05, 0.3)
    assert saturation(1.0, A, B) == pytest.approx(0.05)
    assert saturation(1.2, A, B) == pytest.approx(0.3)
    psi = np.linspace(0, 2, 200)
    vals = [saturation(v, A, B) for v in psi]
    assert np.all(np.diff(vals) >= 0)


def _run_exciter(v_mag, v_pss, t=10.0, dt=0.005):
    p = ExciterParams()
    state = np.array([1.0, 1.5])
    out = [exciter_step(1.0, v_mag, v_pss, state, dt, p) for _ in range(int(t / dt))]
    return np.array(out)


def test_exciter_holds_and_responds():
    assert np.allclose(_run_exciter(1.0, 0.0), 1.5)
    low = _run_exciter(0.95, 0.0)
    assert np.all(np.diff(low) >= -1e-12) and low[-1] == ExciterParams().Efd_max
    assert _run_exciter(1.0, 0.05)[-1] > 1.5


def _run_governor(speed_dev, t=40.0, dt=0.01):
    state = np.array([0.5, 0.5])
    for _ in range(int(t / dt)):
        pm = governor_step(speed_dev, 0.5, state, dt, GovernorParams())
    return pm


def test_governor():
    assert _run_governor(0.0) == pytest.approx(0.5)
    assert _run_governor(0.05 * 0.1) == pytest.approx(0.4, abs=1e-6)
    assert _run_governor(-1.0) == pytest.approx(GovernorParams().Vmax)


def test_pss_washes_out_dc():
    p = PssParams()
    state = pss_initial(p, 0.7)
    for _ in range(int(10 * p.Tw1 / 0.01)):
        out = pss_dual_input_step(0.8, 0.0, state, 0.01, p)
    assert abs(out) < 1e-4


def test_pss_frequency_response():
    p = PssParams(Ks1=1.0, Vmin=-10, Vmax=10)
    f, dt, amp = 0.9, 0.001, 1e-3
    state = pss_initial(p, 0.0)
    t = np.arange(0, 40, dt)
    out = np.array([pss_dual_input_step(0.0, amp * math.sin(2 * math.pi * f * tk), state, dt, p)
                    for tk in t])
    tail = t > 30
    basis = np.column_stack([np.sin(2 * math.pi * f * t[tail]), np.cos(2 * math.pi * f * t[tail])])
    (a, b), *_ = np.linalg.lstsq(basis, out[tail], rcond=None)
    g = pss_frequency_response(p, f)
    assert math.hypot(a, b) / amp == pytest.approx(abs(g), rel=0.02)
    assert math.degrees(math.atan2(b, a)) == pytest.approx(math.degrees(cmath.phase(g)), abs=5)


@given(st.floats(-5, 5), st.floats(-0.5, 0.5))
def test_pss_output_limited(p_elec, speed):
    p = PssParams()
    state = pss_initial(p, 0.0)
    for _ in range(5):
        out = pss_dual_input_step(p_elec, speed, state, 0.01, p)
    assert p.Vmin <= out <= p.Vmax
