"""Grid-following converter plant with an auxiliary power oscillation damper.

The plant is a current source synchronised to its terminal voltage. A plant
controller regulates the point-of-interconnection voltage through reactive
current and passes the active power order through as active current. The
POD adds its output to the active (``"p"``) or reactive (``"q"``) current
command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .device import Device
from .numerics import InvalidTimeConstant, antiwindup, deadband, heun_step, lead_lag_deriv, limit

OMEGA_S = 2 * math.pi * 60.0

POD_INPUTS = {"p": ("branch_p", "bus_freq"), "q": ("branch_q", "bus_v"), "off": ()}


@dataclass
class PodParams:
    mode: str = "off"
    input: str = "branch_p"
    deadband: float = 0.0
    Tf: float = 0.02
    Kw: float = 1.0
    Tw: float = 5.0
    T1: float = 0.1
    T2: float = 0.1
    T3: float = 0.1
    T4: float = 0.1
    out_min: float = -0.1
    out_max: float = 0.1

    def __post_init__(self):
        if self.mode not in POD_INPUTS:
            raise ValueError(f"pod.mode must be one of {sorted(POD_INPUTS)}, got {self.mode!r}")
        if self.mode != "off" and self.input not in POD_INPUTS[self.mode]:
            raise ValueError(f"pod.input {self.input!r} is not valid for mode {self.mode!r}")
        for name in ("Tf", "Tw", "T2", "T4"):
            if not getattr(self, name) > 0:
                raise InvalidTimeConstant(f"pod.{name} must be > 0")
        if not self.out_min < self.out_max:
            raise ValueError("pod.out_min must be below pod.out_max")
        if self.Kw < 0 or self.deadband < 0:
            raise ValueError("pod.Kw and pod.deadband must be >= 0")


def pod_derivatives(raw: float, x, p: PodParams) -> tuple[float, np.ndarray]:
    """Returns ``(limited output, dx)`` for POD states ``[s0, s1, s2, s3]``."""
    u = deadband(raw, p.deadband)
    dx = np.empty(4)
    dx[0] = (u - x[0]) / p.Tf
    y = p.Kw * (x[0] - x[1])
    dx[1] = (x[0] - x[1]) / p.Tw
    y, dx[2] = lead_lag_deriv(y, x[2], p.T1, p.T2)
    y, dx[3] = lead_lag_deriv(y, x[3], p.T3, p.T4)
    return limit(y, p.out_min, p.out_max), dx


def pod_step(raw_input: float, params: PodParams, state: np.ndarray, dt: float) -> float:
    """Advance the POD states in place with ``raw_input`` held; return the new output."""
    state[:] = heun_step(state, lambda x: pod_derivatives(raw_input, x, params)[1], dt)
    return pod_derivatives(raw_input, state, params)[0]


def wrap(angle: float) -> float:
    return (angle + math.pi) % (2 * math.pi) - math.pi


def bus_frequency(bus_angle_history, dt: float, Tf: float = 0.02, omega_s: float = OMEGA_S) -> np.ndarray:
    """Filtered frequency deviation (pu) for each sample of a bus-angle record.

    The estimator is a washout on the angle with time constant ``Tf``; the
    input is interpolated linearly within each step.
    """
    th = np.asarray(bus_angle_history, dtype=float)
    if th.size < 2:
        raise ValueError("need at least two angle samples")
    x = th[0]
    out = np.zeros(th.size)
    for k in range(1, th.size):
        f0 = wrap(th[k - 1] - x) / Tf
        xp = x + dt * f0
        f1 = wrap(th[k] - xp) / Tf
        x = x + 0.5 * dt * (f0 + f1)
        out[k] = wrap(th[k] - x) / (omega_s * Tf)
    return out


@dataclass
class PpcParams:
    Kp_v: float = 2.0
    Ki_v: float = 20.0
    Kc: float = 0.02       # reactive droop on the voltage error
    Ki_p: float = 0.1      # slow active power trim
    Imax: float = 1.1
    T_conv: float = 0.02
    lv0: float = 0.2       # active current fully blocked below this voltage
    lv1: float = 0.5       # active current unrestricted above this voltage
    T_pll: float = 0.01    # terminal angle tracker


def current_limit_qpriority(ipcmd: float, iqcmd: float, imax: float) -> tuple[float, float]:
    iq = limit(iqcmd, -imax, imax)
    ipmax = math.sqrt(max(imax * imax - iq * iq, 0.0))
    return limit(ipcmd, -ipmax, ipmax), iq


def ppc_commands(v_meas: float, q_meas: float, pod_out: float, mode: str, refs: dict,
                 x, p: PpcParams) -> tuple[float, float]:
    """Limited ``(Ipcmd, Iqcmd)`` from PPC states ``[q_int, p_int]``."""
    e = refs["v"] - v_meas - p.Kc * (q_meas - refs["q"])
    iq = p.Kp_v * e + x[0]
    ip = (refs["p"] + x[1]) / max(v_meas, 0.01)
    if mode == "p":
        ip += pod_out
    elif mode == "q":
        iq += pod_out
    return current_limit_qpriority(ip, iq, p.Imax)


def ppc_derivatives(v_meas: float, q_meas: float, p_meas: float, refs: dict, x, p: PpcParams) -> np.ndarray:
    e = refs["v"] - v_meas - p.Kc * (q_meas - refs["q"])
    dq = antiwindup(x[0], p.Ki_v * e, -p.Imax, p.Imax)
    dp = antiwindup(x[1], p.Ki_p * (refs["p"] - p_meas), -p.Imax, p.Imax)
    return np.array([dq, dp])


def ppc_step(v_meas: float, q_meas: float, p_meas: float, pod_out: float, refs: dict,
             state: np.ndarray, dt: float, params: PpcParams | None = None,
             mode: str = "off") -> tuple[float, float]:
    """Advance the PPC integrators ``[q_int, p_int]`` and return ``(Ipcmd, Iqcmd)``."""
    p = params or PpcParams()
    state[:] = heun_step(state, lambda x: ppc_derivatives(v_meas, q_meas, p_meas, refs, x, p), dt)
    state[:] = np.clip(state, -p.Imax, p.Imax)
    return ppc_commands(v_meas, q_meas, pod_out, mode, refs, state, p)


def lv_gain(v_mag: float, p: PpcParams) -> float:
    return limit((v_mag - p.lv0) / (p.lv1 - p.lv0), 0.0, 1.0)


def converter_current(ip: float, iq: float, v_term: complex, p: PpcParams,
                      angle: float | None = None) -> complex:
    """Current injected (device base) for tracked currents ``ip``, ``iq``.

    The current is oriented on ``angle`` (the synchronising angle state),
    or on the terminal voltage itself when no angle is given.
    """
    vm = abs(v_term)
    if vm < 1e-9:
        return 0j
    frame = v_term / vm if angle is None else complex(math.cos(angle), math.sin(angle))
    return complex(ip * lv_gain(vm, p), -iq) * frame


def gfl_converter_step(Ipcmd: float, Iqcmd: float, v_term: complex, state: np.ndarray,
                       dt: float, params: PpcParams | None = None) -> complex:
    """Advance the current trackers ``[ip, iq]`` and return the injected current."""
    p = params or PpcParams()
    cmd = np.array([Ipcmd, Iqcmd])
    state[:] = heun_step(state, lambda x: (cmd - x) / p.T_conv, dt)
    return converter_current(state[0], state[1], v_term, p)


class GflPlant(Device):
    """Converter + plant controller + POD.

    ``meas`` passed to :meth:`derivatives` must provide ``v`` (bus voltage
    array) and ``tie_flow()`` (complex tie power, system base). The plant
    regulates the voltage at ``poi_idx`` and the POD sees the tie flow or
    the POI voltage/frequency.
    """

    state_names = ("pod_s0", "pod_s1", "pod_s2", "pod_s3", "freq_x",
                   "ppc_qint", "ppc_pint", "conv_ip", "conv_iq", "pll_angle")

    def __init__(self, name: str, bus: int, mva_base: float, ppc: PpcParams | None = None,
                 pod: PodParams | None = None, poi: int | None = None, system_mva: float = 100.0,
                 f_Tf: float = 0.02, omega_s: float = OMEGA_S):
        super().__init__(name, bus, mva_base, system_mva)
        self.ppc = ppc or PpcParams()
        self.pod = pod
        self.poi = bus if poi is None else poi
        self.poi_idx = -1
        self.f_Tf = f_Tf
        self.omega_s = omega_s
        self.refs = {"v": 1.0, "q": 0.0, "p": 0.0}
        self.pod_ref = 0.0

    @property
    def pod_mode(self) -> str:
        return "off" if self.pod is None else self.pod.mode

    def _pod_signal(self, x, meas) -> float:
        v_poi = meas.v[self.poi_idx]
        sel = self.pod.input
        if sel == "branch_p":
            return meas.tie_flow().real
        if sel == "branch_q":
            return meas.tie_flow().imag
        if sel == "bus_v":
            return abs(v_poi)
        return wrap(math.atan2(v_poi.imag, v_poi.real) - x[4]) / (self.omega_s * self.f_Tf)

    def init(self, v, s, meas):
        s_dev = s / self.to_sys
        vm = abs(v)
        i = (s_dev / v).conjugate()
        rot = (i * v.conjugate() / vm)
        ip, iq = rot.real, -rot.imag
        if lv_gain(vm, self.ppc) < 1.0:
            raise ValueError(f"{self.name}: initial voltage {vm:.3f} is in the low-voltage region")
        v_poi = meas.v[self.poi_idx]
        self.refs = {"v": abs(v_poi), "q": s_dev.imag, "p": s_dev.real}
        x = np.zeros(self.n_states)
        x[4] = math.atan2(v_poi.imag, v_poi.real)
        x[5] = iq
        x[6] = ip * abs(v_poi) - s_dev.real
        x[7], x[8] = ip, iq
        x[9] = math.atan2(v.imag, v.real)
        if self.pod is not None and self.pod.mode != "off":
            self.pod_ref = self._pod_signal(x, meas)
            x[0] = 0.0
        ipc, iqc = ppc_commands(abs(v_poi), s_dev.imag, 0.0, "off", self.refs, x[5:7], self.ppc)
        if abs(ipc - ip) > 1e-9 or abs(iqc - iq) > 1e-9:
            raise ValueError(f"{self.name}: dispatch exceeds the current limit")
        return x

    def current_source(self, x, v):
        return converter_current(x[7], x[8], v, self.ppc, x[9]) * self.to_sys

    def _outputs(self, x, v, meas):
        i = converter_current(x[7], x[8], v, self.ppc, x[9])
        s = v * i.conjugate()
        pod_out = 0.0
        dpod = np.zeros(4)
        if self.pod is not None:
            raw = self._pod_signal(x, meas) - self.pod_ref if self.pod.mode != "off" else 0.0
            pod_out, dpod = pod_derivatives(raw, x[0:4], self.pod)
        return s, pod_out, dpod

    def derivatives(self, x, v, meas):
        s, pod_out, dpod = self._outputs(x, v, meas)
        v_poi = meas.v[self.poi_idx]
        vm_poi = abs(v_poi)
        dx = np.empty(self.n_states)
        dx[0:4] = dpod
        dx[4] = wrap(math.atan2(v_poi.imag, v_poi.real) - x[4]) / self.f_Tf
        dx[5:7] = ppc_derivatives(vm_poi, s.imag, s.real, self.refs, x[5:7], self.ppc)
        ipc, iqc = ppc_commands(vm_poi, s.imag, pod_out, self.pod_mode, self.refs, x[5:7], self.ppc)
        dx[7] = (ipc - x[7]) / self.ppc.T_conv
        dx[8] = (iqc - x[8]) / self.ppc.T_conv
        dx[9] = wrap(math.atan2(v.imag, v.real) - x[9]) / self.ppc.T_pll
        return dx

    def clamp(self, x):
        x[5] = limit(x[5], -self.ppc.Imax, self.ppc.Imax)
        x[6] = limit(x[6], -self.ppc.Imax, self.ppc.Imax)

    def record(self, x, v, meas):
        s, pod_out, _ = self._outputs(x, v, meas)
        return {"p": s.real * self.to_sys, "q": s.imag * self.to_sys, "pod": pod_out,
                "i": abs(converter_current(x[7], x[8], v, self.ppc, x[9]))}

    def check(self, x, v):
        bad = []
        i = abs(converter_current(x[7], x[8], v, self.ppc, x[9]))
        if i > self.ppc.Imax * (1 + 1e-9):
            bad.append(f"{self.name}: current {i:.6f} above Imax")
        return bad
