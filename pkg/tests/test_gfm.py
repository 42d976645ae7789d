import cmath
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lfodamp.gfm import (E_MAX, GfmParams, GfmPlant, current_controller_derivatives,
                         current_controller_step, droop_feedback_derivatives, droop_feedback_step,
                         pll_derivatives, pll_step, regfm_step, virtual_excitation_step, voltage_source_interface,
                         vsm_swing_derivatives, vsm_swing_step)
from lfodamp.numerics import heun_step

DT = 1 / 240


def test_swing_equilibrium_and_step():
    p = GfmParams()
    _, dx = vsm_swing_derivatives(0.5, 0.5, [1.0, 1.0], p)
    assert np.all(dx == 0)
    _, dx = vsm_swing_derivatives(0.5, 0.6, [1.0, 1.0], p)
    assert dx[0] == pytest.approx(-0.1 / (2 * p.Hv))


def test_droop_variant_speed():
    p = GfmParams(variant="droop", mp=0.02)
    state = np.array([1.0, 1.0])
    for _ in range(200):
        out = vsm_swing_step(0.5, 0.55, state, DT, p)
    assert out == pytest.approx(0.999)


def test_virtual_excitation():
    p = GfmParams()
    state = np.array([1.0])
    assert virtual_excitation_step(1.0, 1.0, 0.1, 0.1, state, DT, p) == pytest.approx(1.0)
    # closed loop: the measured voltage follows the reference through a unity plant
    state, v = np.array([0.98]), 0.98
    for _ in range(int(5 / DT)):
        v = virtual_excitation_step(1.0, v, 0.0, 0.0, state, DT, p)
    assert abs(1.0 - v) < 1e-4
    state = np.array([1.0])
    for _ in range(int(5 / DT)):
        out = virtual_excitation_step(1.0, 0.0, 0.0, 0.0, state, DT, p)
    assert out == E_MAX


def test_droop_feedback():
    p = GfmParams(Kvd=0.1, Kvq=0.0)
    state = np.array([0.3, -0.2])
    for _ in range(int(2 / DT)):
        fd, vd = droop_feedback_step(0.0, 0.0, p, state, DT)
    assert abs(fd) < 1e-9 and abs(vd) < 1e-9
    state = np.zeros(2)
    for _ in range(int(2 / DT)):
        fd, vd = droop_feedback_step(0.5, 0.0, p, state, DT)
    assert vd == pytest.approx(0.05)


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_droop_feedback_bilinear(Id, Iq):
    a = GfmParams(Kvd=0.1, Kvq=0.3, Kfd=0.2, Kfq=0.05)
    b = GfmParams(Kvd=0.3, Kvq=0.1, Kfd=0.05, Kfq=0.2)
    (_, _), dxa = droop_feedback_derivatives(Id, Iq, [0.0, 0.0], a)
    (_, _), dxb = droop_feedback_derivatives(Iq, Id, [0.0, 0.0], b)
    assert dxa == pytest.approx(dxb)
    d2 = GfmParams(Kvd=0.2, Kvq=0.6)
    (_, _), dx2 = droop_feedback_derivatives(Id, Iq, [0.0, 0.0], d2)
    assert dx2[0] == pytest.approx(2 * dxa[0])


def test_current_controller():
    p = GfmParams()
    _, dx = current_controller_derivatives(1.0, 1.05, 0.02, 0.03, [0.98, 1.02], p)
    assert dx == pytest.approx([0.0, 0.0])
    _, dx = current_controller_derivatives(1.01, 1.0, 0.0, 0.0, [1.0, 1.0], p)
    assert dx[0] == pytest.approx(0.01 * p.Kin)
    state = np.array([1.0, 1.0])
    for _ in range(int(3 / DT)):
        w, _ = current_controller_step(1.01, 1.0, 0.004, 0.0, state, DT, p)
    assert w == pytest.approx(1.006, abs=1e-9)


def test_voltage_source_interface():
    p = GfmParams(x_int=0.1)
    assert voltage_source_interface(1.0, 0.0, 1.0 + 0j, p) == 0
    assert voltage_source_interface(1.05, 0.0, 1.0 + 0j, p) == pytest.approx(-0.5j)
    e = 1.0 + 2 * p.Imax * 0.1
    raw = (cmath.rect(e, 0.3) - 1.0) / p.z_int
    i = voltage_source_interface(e, 0.3, 1.0 + 0j, p)
    assert abs(i) == pytest.approx(p.Imax)
    assert cmath.phase(i) == pytest.approx(cmath.phase(raw), abs=1e-9)


def test_pll_lock_ramp_and_freeze():
    p = GfmParams()
    state = np.zeros(2)
    for _ in range(int(2 / DT)):
        pll_step(cmath.rect(1.0, 0.2), state, DT, p)
    assert state[0] == pytest.approx(0.2, abs=1e-6)
    # off-nominal ramp; time rides along so each stage sees its own phasor
    w = 2 * math.pi * 0.5
    y = np.zeros(3)
    f = lambda y: np.r_[pll_derivatives(cmath.rect(1.0, w * y[2]), y[:2], p)[1], 1.0]
    for _ in range(int(4 / DT)):
        y = heun_step(y, f, DT)
    assert y[0] == pytest.approx(w * y[2], abs=1e-6)
    before = state.copy()
    pll_step(0.01 + 0j, state, DT, p)
    assert np.array_equal(state, before)


def _regfm(v, p, t=20.0, **refs):
    params = GfmParams(variant="regfm", **p)
    plant = GfmPlant("G", 1, 100.0, params)
    x = plant.init(v, refs.get("s", 0.5 + 0.1j))
    meas = {"v": v, "p_ref": plant.refs["p"], "q_ref": plant.refs["q"], "e_ref": plant.refs["e"]}
    meas.update(refs.get("meas", {}))
    for _ in range(int(t / DT)):
        i = regfm_step(meas, params, x, DT)
    return i, x, plant


def test_regfm_equilibrium():
    v = 1.0 + 0j
    i, _, _ = _regfm(v, {}, t=2.0)
    assert v * i.conjugate() == pytest.approx(0.5 + 0.1j, abs=1e-9)


def _slow_grid(params, t_end, df=-0.01):
    """Integrate a REGFM plant against a grid running ``df`` pu off nominal.

    Time rides along as the last state so both Heun stages see the grid
    phasor at their own instant.
    """
    plant = GfmPlant("G", 1, 100.0, params)
    x = np.r_[plant.init(1.0 + 0j, 0.5 + 0j), 0.0]

    def f(y):
        v = cmath.rect(1.0, df * 2 * math.pi * 60 * y[-1])
        return np.r_[plant.derivatives(y[:-1], v), 1.0]

    for _ in range(int(t_end / DT)):
        x = heun_step(x, f, DT)
        plant.clamp(x[:-1])
    return x[:-1]


def test_regfm_droop_against_grid_frequency():
    # grid 0.01 pu slow: the internal angle must drift with the grid to hold P
    params = GfmParams(variant="regfm", Pmax=2.0)
    x = _slow_grid(params, 30.0)
    assert x[0] - 0.5 == pytest.approx(0.01 / params.mp, rel=1e-3)


def test_regfm_power_limit():
    x = _slow_grid(GfmParams(variant="regfm", Pmax=0.6), 60.0)
    assert x[0] == pytest.approx(0.6, abs=1e-3)


@pytest.mark.parametrize("variant", ["vsm", "droop", "regfm"])
def test_plant_equilibrium_hold(variant):
    plant = GfmPlant("G", 1, 100.0, GfmParams(variant=variant))
    v = cmath.rect(1.01, 0.1)
    x = plant.init(v, 0.6 + 0.2j)
    worst = 0.0
    for _ in range(int(10 / DT)):
        worst = max(worst, np.max(np.abs(plant.derivatives(x, v))))
        x = heun_step(x, lambda y: plant.derivatives(y, v), DT)
    assert worst < 1e-6


def test_params_validation():
    with pytest.raises(ValueError):
        GfmParams(variant="foo")
    with pytest.raises(ValueError):
        GfmParams(x_int=0.0)
    with pytest.raises(ValueError):
        GfmParams(Hv=0.0)
