"""Grid-forming converter models.

Two controllers share one voltage-source-behind-impedance interface:

* the layered controller (``variant`` ``"vsm"`` or ``"droop"``): an outer
  swing-equation (or P-f droop) loop producing a frequency reference, a PI
  virtual excitation producing a voltage reference, first-order current
  droop feedbacks and integrating frequency/voltage command channels; a PLL
  resolves the injected current into the controller's d/q frame.
* ``"regfm"``: a P-f / Q-V droop benchmark with PI power limiting.

Controller quantities are on the converter MVA base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .device import Device
from .numerics import antiwindup, heun_step, limit

OMEGA_S = 2 * math.pi * 60.0
E_MIN, E_MAX = 0.5, 1.5
VARIANTS = ("vsm", "droop", "regfm")


@dataclass
class GfmParams:
    variant: str = "vsm"
    # outer loop
    Hv: float = 10.0
    Dv: float = 150.0
    Tf_vsm: float = 0.02
    mp: float = 0.02
    mq: float = 0.02
    # virtual excitation
    Kp_ve: float = 0.5
    Ki_ve: float = 10.0
    # droop feedbacks (first-order lags)
    Kvd: float = 0.0
    Kvq: float = 0.05
    Kfd: float = 0.0
    Kfq: float = 0.0
    Tvdrp: float = 0.05
    Tfdrp: float = 0.05
    # frequency / voltage command integrators
    Kin: float = 20.0
    Kiv: float = 20.0
    # interface
    r_int: float = 0.0
    x_int: float = 0.15
    Imax: float = 1.1
    # PLL
    Kp_pll: float = 30.0
    Ki_pll: float = 300.0
    v_pll_freeze: float = 0.05
    # REGFM power measurement and limiting
    Tp: float = 0.02
    Tq: float = 0.02
    Te: float = 0.01
    Pmax: float = 1.0
    Pmin: float = 0.0
    Qmax: float = 0.75
    Qmin: float = -0.75
    Kpp_lim: float = 0.02
    Kip_lim: float = 0.5
    Kpq_lim: float = 0.02
    Kiq_lim: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"gfm.variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (self.Tvdrp > 0 and self.Tfdrp > 0 and self.Tf_vsm > 0):
            raise ValueError("gfm droop/outer-loop time constants must be > 0")
        if self.variant == "vsm" and not self.Hv > 0:
            raise ValueError("gfm.Hv must be > 0 for the vsm variant")
        if not (self.x_int > 0 and self.Imax > 0):
            raise ValueError("gfm.x_int and gfm.Imax must be > 0")
        if not (self.Kin > 0 and self.Kiv > 0):
            raise ValueError("gfm.Kin and gfm.Kiv must be > 0")

    @property
    def z_int(self) -> complex:
        return complex(self.r_int, self.x_int)


def vsm_swing_derivatives(p_ref: float, p_meas: float, x, p: GfmParams) -> tuple[float, np.ndarray]:
    """Outer P loop, states ``[speed, speed_lag]``; returns ``(freq_ref, dx)``.

    The droop variant bypasses the swing integrator (its speed state stays
    put) and drives the lag with ``1 + mp*(p_ref - p_meas)``.
    """
    speed, lag = x[0], x[1]
    if p.variant == "vsm":
        dspeed = (p_ref - p_meas - p.Dv * (speed - 1.0)) / (2.0 * p.Hv)
        target = speed
    else:
        dspeed = 0.0
        target = 1.0 + p.mp * (p_ref - p_meas)
    return lag, np.array([dspeed, (target - lag) / p.Tf_vsm])


def vsm_swing_step(p_ref: float, p_meas: float, state: np.ndarray, dt: float,
                   params: GfmParams | None = None) -> float:
    p = params or GfmParams()
    state[:] = heun_step(state, lambda x: vsm_swing_derivatives(p_ref, p_meas, x, p)[1], dt)
    return state[1]


def virtual_excitation_derivatives(v_ref: float, v_meas: float, q_ref: float, q_meas: float,
                                   x: float, p: GfmParams) -> tuple[float, float]:
    """PI voltage regulator with reactive droop; returns ``(voltage_ref, dx)``."""
    e = v_ref + p.mq * (q_ref - q_meas) - v_meas
    raw = p.Kp_ve * e + x
    out = limit(raw, E_MIN, E_MAX)
    dx = p.Ki_ve * e
    if (raw >= E_MAX and dx > 0) or (raw <= E_MIN and dx < 0):
        dx = 0.0
    return out, dx


def virtual_excitation_step(v_ref: float, v_meas: float, q_ref: float, q_meas: float,
                            state: np.ndarray, dt: float, params: GfmParams | None = None) -> float:
    """Advance ``state = [integrator]`` in place and return the voltage reference."""
    p = params or GfmParams()
    f = lambda x: np.array([virtual_excitation_derivatives(v_ref, v_meas, q_ref, q_meas, x[0], p)[1]])
    state[:] = heun_step(state, f, dt)
    state[0] = limit(state[0], E_MIN, E_MAX)
    return virtual_excitation_derivatives(v_ref, v_meas, q_ref, q_meas, state[0], p)[0]


def droop_feedback_derivatives(Id: float, Iq: float, x, p: GfmParams) -> tuple[tuple[float, float], np.ndarray]:
    """States ``[s14, s15]``; returns ``((Fd, Vd), dx)``."""
    ds14 = ((Id * p.Kvd + Iq * p.Kvq) - x[0]) / p.Tvdrp
    ds15 = ((Id * p.Kfd + Iq * p.Kfq) - x[1]) / p.Tfdrp
    return (x[1], x[0]), np.array([ds14, ds15])


def droop_feedback_step(Id: float, Iq: float, params: GfmParams, state: np.ndarray, dt: float) -> tuple[float, float]:
    state[:] = heun_step(state, lambda x: droop_feedback_derivatives(Id, Iq, x, params)[1], dt)
    return state[1], state[0]


def current_controller_derivatives(Wpr: float, Vpr: float, Fd: float, Vd: float, x,
                                   p: GfmParams) -> tuple[tuple[float, float], np.ndarray]:
    """States ``[s11, s13]``; returns ``((freq_cmd, volt_cmd), dx)``."""
    ds11 = p.Kin * (Wpr - Fd - x[0])
    ds13 = antiwindup(x[1], p.Kiv * (Vpr - Vd - x[1]), E_MIN, E_MAX)
    return (x[0], x[1]), np.array([ds11, ds13])


def current_controller_step(Wpr: float, Vpr: float, Fd: float, Vd: float, state: np.ndarray,
                            dt: float, params: GfmParams | None = None) -> tuple[float, float]:
    p = params or GfmParams()
    state[:] = heun_step(state, lambda x: current_controller_derivatives(Wpr, Vpr, Fd, Vd, x, p)[1], dt)
    state[1] = limit(state[1], E_MIN, E_MAX)
    return state[0], state[1]


def voltage_source_interface(E: float, delta: float, v_term: complex, params: GfmParams) -> complex:
    """Injected current (converter base) of ``E∠delta`` behind the internal impedance.

    Beyond ``Imax`` the internal voltage is backed off along the current
    direction so the magnitude sits on the limit with the phase unchanged.
    """
    e = E * complex(math.cos(delta), math.sin(delta))
    i = (e - v_term) / params.z_int
    mag = abs(i)
    if mag > params.Imax:
        i *= params.Imax / mag
    return i


def pll_derivatives(v_term: complex, x, p: GfmParams) -> tuple[float, np.ndarray]:
    """States ``[angle, integrator]``; returns ``(angle, dx)``; frozen at low voltage."""
    vm = abs(v_term)
    if vm < p.v_pll_freeze:
        return x[0], np.zeros(2)
    err = (v_term * complex(math.cos(x[0]), -math.sin(x[0]))).imag / vm
    return x[0], np.array([p.Kp_pll * err + x[1], p.Ki_pll * err])


def pll_step(v_term: complex, state: np.ndarray, dt: float, params: GfmParams | None = None) -> float:
    p = params or GfmParams()
    state[:] = heun_step(state, lambda x: pll_derivatives(v_term, x, p)[1], dt)
    return state[0]


def regfm_derivatives(meas: dict, x, p: GfmParams) -> tuple[tuple[float, float], np.ndarray]:
    """REGFM-style droop; states ``[p_f, q_f, delta, e, xp_max, xp_min, xq_max, xq_min]``.

    ``meas`` holds ``p``, ``q`` (converter base) and the references ``p_ref``,
    ``q_ref``, ``e_ref``. Returns ``((E, delta), dx)``.
    """
    pf, qf, delta, e = x[0], x[1], x[2], x[3]
    xpmax, xpmin, xqmax, xqmin = x[4], x[5], x[6], x[7]
    ep_hi, ep_lo = min(0.0, p.Pmax - pf), max(0.0, p.Pmin - pf)
    eq_hi, eq_lo = min(0.0, p.Qmax - qf), max(0.0, p.Qmin - qf)
    w = 1.0 + p.mp * (meas["p_ref"] - pf) + p.Kpp_lim * (ep_hi + ep_lo) + xpmax + xpmin
    e_cmd = meas["e_ref"] + p.mq * (meas["q_ref"] - qf) + p.Kpq_lim * (eq_hi + eq_lo) + xqmax + xqmin
    dx = np.empty(8)
    dx[0] = (meas["p"] - pf) / p.Tp
    dx[1] = (meas["q"] - qf) / p.Tq
    dx[2] = OMEGA_S * (w - 1.0)
    dx[3] = antiwindup(e, (limit(e_cmd, E_MIN, E_MAX) - e) / p.Te, E_MIN, E_MAX)
    # limiting integrators engage beyond the limit and unwind back to zero
    dx[4] = p.Kip_lim * (p.Pmax - pf) if (pf > p.Pmax or xpmax < 0) else 0.0
    dx[5] = p.Kip_lim * (p.Pmin - pf) if (pf < p.Pmin or xpmin > 0) else 0.0
    dx[6] = p.Kiq_lim * (p.Qmax - qf) if (qf > p.Qmax or xqmax < 0) else 0.0
    dx[7] = p.Kiq_lim * (p.Qmin - qf) if (qf < p.Qmin or xqmin > 0) else 0.0
    return (e, delta), dx


def regfm_clamp(x) -> None:
    x[3] = limit(x[3], E_MIN, E_MAX)
    x[4] = min(x[4], 0.0)
    x[5] = max(x[5], 0.0)
    x[6] = min(x[6], 0.0)
    x[7] = max(x[7], 0.0)


def regfm_step(measurements: dict, params: GfmParams, state: np.ndarray, dt: float) -> complex:
    """Advance the REGFM states with ``measurements`` held; return the injected current.

    ``measurements`` needs ``v`` (terminal phasor, converter base) and the
    references ``p_ref``, ``q_ref``, ``e_ref``; ``p``/``q`` are computed from
    the current state when absent.
    """
    v = measurements["v"]

    def f(x):
        m = dict(measurements)
        if "p" not in measurements:
            s = v * voltage_source_interface(x[3], x[2], v, params).conjugate()
            m["p"], m["q"] = s.real, s.imag
        return regfm_derivatives(m, x, params)[1]

    state[:] = heun_step(state, f, dt)
    regfm_clamp(state)
    return voltage_source_interface(state[3], state[2], v, params)


LAYERED_STATES = ("speed", "speed_lag", "ve_int", "s14", "s15", "s11", "s13", "delta",
                  "pll_angle", "pll_int")
REGFM_STATES = ("p_f", "q_f", "delta", "e", "xp_max", "xp_min", "xq_max", "xq_min")


class GfmPlant(Device):
    """Grid-forming converter as a Norton source behind its internal impedance."""

    def __init__(self, name: str, bus: int, mva_base: float, params: GfmParams | None = None,
                 system_mva: float = 100.0):
        super().__init__(name, bus, mva_base, system_mva)
        self.p = params or GfmParams()
        self.state_names = REGFM_STATES if self.p.variant == "regfm" else LAYERED_STATES
        self.y_src = 1.0 / (self.p.z_int / self.to_sys)
        self.refs: dict[str, float] = {}

    def _e_delta(self, x) -> tuple[float, float]:
        if self.p.variant == "regfm":
            return x[3], x[2]
        return x[6], x[7]

    def current_dev(self, x, v_sys: complex) -> complex:
        E, delta = self._e_delta(x)
        return voltage_source_interface(E, delta, v_sys, self.p)

    def current_source(self, x, v):
        i = self.current_dev(x, v) * self.to_sys
        return i + self.y_src * v

    def init(self, v, s, meas=None):
        p = self.p
        s_dev = s / self.to_sys
        i = (s_dev / v).conjugate()
        if abs(i) > p.Imax:
            raise ValueError(f"{self.name}: dispatch current {abs(i):.3f} above Imax")
        e = v + p.z_int * i
        E, delta = abs(e), math.atan2(e.imag, e.real)
        if not E_MIN < E < E_MAX:
            raise ValueError(f"{self.name}: internal voltage {E:.3f} outside [{E_MIN}, {E_MAX}]")
        self.refs = {"p": s_dev.real, "q": s_dev.imag, "v": abs(v), "e": E}
        if p.variant == "regfm":
            return np.array([s_dev.real, s_dev.imag, delta, E, 0.0, 0.0, 0.0, 0.0])
        theta = math.atan2(v.imag, v.real)
        idq = i * complex(math.cos(theta), -math.sin(theta))
        Id, Iq = idq.real, -idq.imag
        s14 = Id * p.Kvd + Iq * p.Kvq
        s15 = Id * p.Kfd + Iq * p.Kfq
        vpr = E + s14
        if not E_MIN < vpr < E_MAX:
            raise ValueError(f"{self.name}: voltage reference {vpr:.3f} outside limits")
        self.refs["fd0"] = s15
        return np.array([1.0, 1.0, vpr, s14, s15, 1.0, E, delta, theta, 0.0])

    def derivatives(self, x, v, meas=None):
        p = self.p
        i = self.current_dev(x, v)
        s = v * i.conjugate()
        if p.variant == "regfm":
            m = {"p": s.real, "q": s.imag, "p_ref": self.refs["p"], "q_ref": self.refs["q"],
                 "e_ref": self.refs["e"]}
            return regfm_derivatives(m, x, p)[1]
        dx = np.empty(10)
        w_lag, dx[0:2] = vsm_swing_derivatives(self.refs["p"], s.real, x[0:2], p)
        vpr, dx[2] = virtual_excitation_derivatives(self.refs["v"], abs(v), self.refs["q"], s.imag, x[2], p)
        theta, dx[8:10] = pll_derivatives(v, x[8:10], p)
        idq = i * complex(math.cos(theta), -math.sin(theta))
        (fd, vd), dx[3:5] = droop_feedback_derivatives(idq.real, -idq.imag, x[3:5], p)
        wpr = w_lag + self.refs["fd0"]
        (w_cmd, _), dx[5:7] = current_controller_derivatives(wpr, vpr, fd, vd, x[5:7], p)
        dx[7] = OMEGA_S * (w_cmd - 1.0)
        return dx

    def clamp(self, x):
        if self.p.variant == "regfm":
            regfm_clamp(x)
        else:
            x[2] = limit(x[2], E_MIN, E_MAX)
            x[6] = limit(x[6], E_MIN, E_MAX)

    def record(self, x, v, meas=None):
        i = self.current_dev(x, v)
        s = v * i.conjugate()
        E, delta = self._e_delta(x)
        return {"p": s.real * self.to_sys, "q": s.imag * self.to_sys, "i": abs(i), "e": E,
                "delta": delta, "speed": self.speed(x)}

    def speed(self, x) -> float:
        """Frequency of the internal voltage, pu."""
        p = self.p
        if p.variant != "regfm":
            return float(x[5])
        pf, qf = x[0], x[1]
        ep = min(0.0, p.Pmax - pf) + max(0.0, p.Pmin - pf)
        return float(1.0 + p.mp * (self.refs["p"] - pf) + p.Kpp_lim * ep + x[4] + x[5])

    def check(self, x, v):
        bad = []
        i = abs(self.current_dev(x, v))
        if i > self.p.Imax * (1 + 1e-9):
            bad.append(f"{self.name}: current {i:.6f} above Imax")
        E, _ = self._e_delta(x)
        if not E_MIN - 1e-12 <= E <= E_MAX + 1e-12:
            bad.append(f"{self.name}: internal voltage {E:.4f} outside clamp")
        return bad
