"""Synchronous generator plant: round-rotor machine, exciter, governor, PSS.

The machine is a GENROU-type model (two rotor circuits per axis, quadratic
saturation) with ``Xq'' = Xd''`` so that it interfaces with the network as a
single Norton admittance behind subtransient reactance. The exciter is a
static PI regulator, the governor follows TGOV1, and the stabilizer is a
dual-input (speed + electrical power) integral-of-accelerating-power PSS.

Parameters are given on the machine MVA base; :class:`SyncGenerator`
converts them to the system base once at construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .device import Device
from .numerics import antiwindup, heun_step, lead_lag_deriv, limit

OMEGA_S = 2 * math.pi * 60.0


@dataclass
class SyncMachineParams:
    H: float = 6.5
    D: float = 0.0
    Ra: float = 0.0025
    Xd: float = 1.8
    Xq: float = 1.7
    Xdp: float = 0.3
    Xqp: float = 0.55
    Xdpp: float = 0.25
    Xqpp: float = 0.25
    Xl: float = 0.2
    Td0p: float = 8.0
    Tq0p: float = 0.4
    Td0pp: float = 0.03
    Tq0pp: float = 0.05
    S10: float = 0.05
    S12: float = 0.3
    mva_base: float = 900.0

    def __post_init__(self):
        if not (self.Xd >= self.Xdp >= self.Xdpp > self.Xl > 0):
            raise ValueError("need Xd >= Xd' >= Xd'' > Xl > 0")
        if not (self.Xq >= self.Xqp >= self.Xqpp > self.Xl):
            raise ValueError("need Xq >= Xq' >= Xq'' > Xl")
        if min(self.Td0p, self.Tq0p, self.Td0pp, self.Tq0pp) <= 0 or self.H <= 0:
            raise ValueError("time constants and H must be > 0")

    def on_base(self, mva: float) -> "SyncMachineParams":
        """Same machine expressed on another MVA base."""
        k = self.mva_base / mva
        zk = 1.0 / k
        return replace(
            self, H=self.H * k, D=self.D * k, Ra=self.Ra * zk,
            Xd=self.Xd * zk, Xq=self.Xq * zk, Xdp=self.Xdp * zk, Xqp=self.Xqp * zk,
            Xdpp=self.Xdpp * zk, Xqpp=self.Xqpp * zk, Xl=self.Xl * zk, mva_base=mva)


def saturation_coefficients(S10: float, S12: float) -> tuple[float, float]:
    """``(A, B)`` of ``S(psi) = B (psi - A)^2 / psi`` through S(1.0)=S10, S(1.2)=S12."""
    if S10 <= 0.0:
        return 0.0, 0.0
    c = math.sqrt(1.2 * S12 / S10)
    if c <= 1.0:
        raise ValueError("saturation needs S12 > S10 / 1.2")
    A = (c - 1.2) / (c - 1.0)
    return A, S10 / (1.0 - A) ** 2


def saturation(psi: float, A: float, B: float) -> float:
    if B == 0.0 or psi <= A or psi <= 0.0:
        return 0.0
    return B * (psi - A) ** 2 / psi


# state order of the machine part
GENROU_STATES = ("delta", "speed_dev", "eqp", "edp", "psikd", "psikq")


class _Genrou:
    """Precomputed constants for one machine (system base)."""

    def __init__(self, p: SyncMachineParams, omega_s: float = OMEGA_S):
        self.p = p
        self.omega_s = omega_s
        self.A, self.B = saturation_coefficients(p.S10, p.S12)
        self.y = 1.0 / complex(p.Ra, p.Xdpp)
        self.kd1 = (p.Xdpp - p.Xl) / (p.Xdp - p.Xl)
        self.kd2 = (p.Xdp - p.Xdpp) / (p.Xdp - p.Xl)
        self.kq1 = (p.Xqpp - p.Xl) / (p.Xqp - p.Xl)
        self.kq2 = (p.Xqp - p.Xqpp) / (p.Xqp - p.Xl)
        self.kd3 = (p.Xdp - p.Xdpp) / (p.Xdp - p.Xl) ** 2
        self.kq3 = (p.Xqp - p.Xqpp) / (p.Xqp - p.Xl) ** 2
        self.rsat = (p.Xq - p.Xl) / (p.Xd - p.Xl)

    def subtransient(self, x) -> tuple[float, float]:
        eqpp = x[2] * self.kd1 + x[4] * self.kd2
        edpp = x[3] * self.kq1 + x[5] * self.kq2
        return edpp, eqpp

    def e_net(self, x) -> complex:
        edpp, eqpp = self.subtransient(x)
        # rotor frame (d real, q imaginary) -> network frame
        return complex(edpp, eqpp) * -1j * complex(math.cos(x[0]), math.sin(x[0]))

    def derivatives(self, x, efd: float, pm: float, i_net: complex) -> tuple[np.ndarray, float]:
        p = self.p
        delta, w, eqp, edp, psikd, psikq = x[0], x[1], x[2], x[3], x[4], x[5]
        idq = i_net * 1j * complex(math.cos(delta), -math.sin(delta))
        Id, Iq = idq.real, idq.imag
        edpp, eqpp = self.subtransient(x)
        S = saturation(math.hypot(edpp, eqpp), self.A, self.B)
        dkd = eqp - psikd - (p.Xdp - p.Xl) * Id
        dkq = edp - psikq + (p.Xqp - p.Xl) * Iq
        pe = edpp * Id + eqpp * Iq
        dx = np.empty(6)
        dx[0] = self.omega_s * w
        dx[1] = (pm / (1.0 + w) - pe - p.D * w) / (2.0 * p.H)
        dx[2] = (efd - eqp - (p.Xd - p.Xdp) * (Id + self.kd3 * dkd) - eqpp * S) / p.Td0p
        dx[3] = (-edp + (p.Xq - p.Xqp) * (Iq - self.kq3 * dkq) - edpp * S * self.rsat) / p.Tq0p
        dx[4] = dkd / p.Td0pp
        dx[5] = dkq / p.Tq0pp
        return dx, pe

    def initialise(self, v: complex, s: complex) -> tuple[np.ndarray, float, float]:
        """Equilibrium states, field voltage and mechanical power for terminal (v, s)."""
        p = self.p
        i = (s / v).conjugate()
        epp = v + complex(p.Ra, p.Xdpp) * i
        S = saturation(abs(epp), self.A, self.B)
        W = (1.0 + S * self.rsat) * epp + 1j * (p.Xq - p.Xqpp) * i
        delta = math.atan2(W.imag, W.real)
        rot = 1j * complex(math.cos(delta), -math.sin(delta))
        idq, edq = i * rot, epp * rot
        Id, Iq = idq.real, idq.imag
        edpp, eqpp = edq.real, edq.imag
        eqp = eqpp + (p.Xdp - p.Xdpp) * Id
        psikd = eqp - (p.Xdp - p.Xl) * Id
        efd = eqp + (p.Xd - p.Xdp) * Id + eqpp * S
        edp = edpp - (p.Xqp - p.Xqpp) * Iq
        psikq = edp + (p.Xqp - p.Xl) * Iq
        pm = edpp * Id + eqpp * Iq
        return np.array([delta, 0.0, eqp, edp, psikd, psikq]), efd, pm


def sync_machine_derivatives(state, params: SyncMachineParams, Efd: float, Pm: float,
                             v_term: complex, omega_s: float = OMEGA_S) -> np.ndarray:
    """Machine state derivatives for terminal voltage ``v_term`` (params on their own base)."""
    g = _Genrou(params, omega_s)
    x = np.asarray(state, dtype=float)
    i_net = (g.e_net(x) - v_term) * g.y
    return g.derivatives(x, Efd, Pm, i_net)[0]


def sync_machine_norton(state, params: SyncMachineParams) -> tuple[complex, complex]:
    g = _Genrou(params)
    return g.e_net(np.asarray(state, dtype=float)) * g.y, g.y


def sync_machine_init(params: SyncMachineParams, v: complex, s: complex):
    """``(state, Efd, Pm)`` at equilibrium with terminal voltage ``v`` delivering ``s``."""
    return _Genrou(params).initialise(v, s)


@dataclass
class ExciterParams:
    """Static PI exciter; a simplified stand-in for a bus-fed static system."""

    Tr: float = 0.01
    Kp: float = 25.0
    Ki: float = 20.0
    Efd_min: float = -5.0
    Efd_max: float = 6.0


def exciter_output(x, e: float, p: ExciterParams) -> float:
    return limit(p.Kp * e + x[1], p.Efd_min, p.Efd_max)


def exciter_derivatives(x, v_ref: float, v_mag: float, v_pss: float, p: ExciterParams):
    """Returns ``(Efd, dx)`` for exciter states ``[v_sensed, integrator]``."""
    e = v_ref + v_pss - x[0]
    raw = p.Kp * e + x[1]
    efd = limit(raw, p.Efd_min, p.Efd_max)
    di = p.Ki * e
    if (raw >= p.Efd_max and di > 0.0) or (raw <= p.Efd_min and di < 0.0):
        di = 0.0
    return efd, np.array([(v_mag - x[0]) / p.Tr, di])


def exciter_step(v_ref: float, v_term_mag: float, v_pss: float, state: np.ndarray, dt: float,
                 params: ExciterParams | None = None) -> float:
    """Advance exciter ``state = [v_sensed, integrator]`` in place; return the new Efd."""
    p = params or ExciterParams()
    state[:] = heun_step(state, lambda x: exciter_derivatives(x, v_ref, v_term_mag, v_pss, p)[1], dt)
    state[1] = limit(state[1], p.Efd_min, p.Efd_max)
    return exciter_output(state, v_ref + v_pss - state[0], p)


@dataclass
class GovernorParams:
    """TGOV1 on the machine base."""

    R: float = 0.05
    T1: float = 0.5
    T2: float = 1.0
    T3: float = 3.0
    Dt: float = 0.0
    Vmin: float = 0.0
    Vmax: float = 1.1

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("governor droop R must be > 0")


def governor_derivatives(x, speed_dev: float, p_ref: float, p: GovernorParams):
    """Returns ``(Pm, dx)`` for states ``[valve, lead_lag]`` (machine base)."""
    valve = x[0]
    dv = antiwindup(valve, ((p_ref - speed_dev / p.R) - valve) / p.T1, p.Vmin, p.Vmax)
    out, dll = lead_lag_deriv(valve, x[1], p.T2, p.T3)
    return out - p.Dt * speed_dev, np.array([dv, dll])


def governor_step(speed_dev: float, p_ref: float, state: np.ndarray, dt: float,
                  params: GovernorParams | None = None) -> float:
    p = params or GovernorParams()
    state[:] = heun_step(state, lambda x: governor_derivatives(x, speed_dev, p_ref, p)[1], dt)
    state[0] = limit(state[0], p.Vmin, p.Vmax)
    return governor_derivatives(state, speed_dev, p_ref, p)[0]


@dataclass
class PssParams:
    """Dual-input stabilizer (speed and electrical power, machine base)."""

    Ks1: float = 20.0
    Tw1: float = 10.0
    Tw2: float = 10.0
    Tw3: float = 10.0
    Tw4: float = 10.0
    T7: float = 10.0
    Ks2: float | None = None  # defaults to T7 / (2H)
    Ks3: float = 1.0
    T8: float = 0.5
    T9: float = 0.1
    M: int = 5
    T1: float = 0.15
    T2: float = 0.03
    T3: float = 0.15
    T4: float = 0.03
    Vmin: float = -0.1
    Vmax: float = 0.1

    @property
    def n_states(self) -> int:
        return 7 + self.M


def pss_derivatives(x, p_elec: float, speed_dev: float, p: PssParams, H: float):
    """Returns ``(v_pss, dx)``; ``H`` is the machine inertia on the PSS power base."""
    dx = np.empty(p.n_states)
    y1, dx[0] = x_wash(speed_dev, x[0], p.Tw1)
    y2, dx[1] = x_wash(y1, x[1], p.Tw2)
    y3, dx[2] = x_wash(p_elec, x[2], p.Tw3)
    y4, dx[3] = x_wash(y3, x[3], p.Tw4)
    ks2 = p.T7 / (2.0 * H) if p.Ks2 is None else p.Ks2
    ch2 = x[4]
    dx[4] = (ks2 * y4 - ch2) / p.T7
    u, dx[5] = lead_lag_deriv(y2 + p.Ks3 * ch2, x[5], p.T8, p.T9)
    for k in range(6, 5 + p.M):
        dx[k] = (u - x[k]) / p.T9
        u = x[k]
    j = 5 + p.M
    z = p.Ks1 * (u - ch2)
    z, dx[j] = lead_lag_deriv(z, x[j], p.T1, p.T2)
    z, dx[j + 1] = lead_lag_deriv(z, x[j + 1], p.T3, p.T4)
    return limit(z, p.Vmin, p.Vmax), dx


def x_wash(inp: float, state: float, Tw: float) -> tuple[float, float]:
    d = inp - state
    return d, d / Tw


def pss_initial(p: PssParams, p_elec: float) -> np.ndarray:
    x = np.zeros(p.n_states)
    x[2] = p_elec
    return x


def pss_dual_input_step(p_elec: float, speed_dev: float, state: np.ndarray, dt: float,
                        params: PssParams | None = None, H: float = 6.5) -> float:
    """Advance the PSS state in place and return the limited stabilizing signal."""
    p = params or PssParams()
    state[:] = heun_step(state, lambda x: pss_derivatives(x, p_elec, speed_dev, p, H)[1], dt)
    return pss_derivatives(state, p_elec, speed_dev, p, H)[0]


def pss_frequency_response(p: PssParams, f_hz: float) -> complex:
    """Analytic speed-channel transfer function of the PSS at ``f_hz`` (power input held)."""
    s = 2j * math.pi * f_hz
    g = (s * p.Tw1 / (1 + s * p.Tw1)) * (s * p.Tw2 / (1 + s * p.Tw2))
    g *= (1 + s * p.T8) / (1 + s * p.T9) ** p.M
    g *= p.Ks1 * (1 + s * p.T1) / (1 + s * p.T2) * (1 + s * p.T3) / (1 + s * p.T4)
    return g


class SyncGenerator(Device):
    """Machine + exciter + governor (+ optional PSS) as one network device."""

    def __init__(self, name: str, bus: int, machine: SyncMachineParams,
                 exciter: ExciterParams | None = None, governor: GovernorParams | None = None,
                 pss: PssParams | None = None, system_mva: float = 100.0, omega_s: float = OMEGA_S):
        super().__init__(name, bus, machine.mva_base, system_mva)
        self.machine = machine
        self.exc = exciter or ExciterParams()
        self.gov = governor or GovernorParams()
        self.pss = pss
        self.g = _Genrou(machine.on_base(system_mva), omega_s)
        self.y_src = self.g.y
        names = list(GENROU_STATES) + ["exc_vs", "exc_int", "gov_valve", "gov_ll"]
        if pss is not None:
            names += [f"pss_{k}" for k in range(pss.n_states)]
        self.state_names = tuple(names)
        self.v_ref = 1.0
        self.p_ref = 0.0

    def init(self, v, s, meas=None):
        xm, efd, pm = self.g.initialise(v, s)
        pm_mach = pm / self.to_sys
        if not self.gov.Vmin <= pm_mach <= self.gov.Vmax:
            raise ValueError(f"{self.name}: dispatch {pm_mach:.3f} pu outside governor limits")
        if not self.exc.Efd_min < efd < self.exc.Efd_max:
            raise ValueError(f"{self.name}: initial Efd {efd:.3f} outside exciter limits")
        self.v_ref = abs(v)
        self.p_ref = pm_mach
        x = [*xm, abs(v), efd, pm_mach, pm_mach]
        if self.pss is not None:
            x += list(pss_initial(self.pss, pm_mach))
        return np.array(x, dtype=float)

    def current_source(self, x, v):
        return self.g.e_net(x) * self.y_src

    def derivatives(self, x, v, meas=None):
        i_net = (self.g.e_net(x) - v) * self.y_src
        # air-gap power, system base
        pe_sys = (self.g.e_net(x) * i_net.conjugate()).real
        w = x[1]
        dx = np.empty(self.n_states)
        v_pss = 0.0
        if self.pss is not None:
            v_pss, dx[10:] = pss_derivatives(x[10:], pe_sys / self.to_sys, w, self.pss, self.machine.H)
        efd, dx[6:8] = exciter_derivatives(x[6:8], self.v_ref, abs(v), v_pss, self.exc)
        pm_mach, dx[8:10] = governor_derivatives(x[8:10], w, self.p_ref, self.gov)
        dx[:6] = self.g.derivatives(x, efd, pm_mach * self.to_sys, i_net)[0]
        return dx

    def clamp(self, x):
        x[7] = limit(x[7], self.exc.Efd_min, self.exc.Efd_max)
        x[8] = limit(x[8], self.gov.Vmin, self.gov.Vmax)

    def record(self, x, v, meas=None):
        i_net = self.injection(x, v)
        s = v * i_net.conjugate()
        out = {"speed": 1.0 + x[1], "delta": x[0], "p": s.real, "q": s.imag}
        if self.pss is not None:
            pe = (self.g.e_net(x) * i_net.conjugate()).real
            out["vpss"] = pss_derivatives(x[10:], pe / self.to_sys, x[1], self.pss, self.machine.H)[0]
        return out

    def check(self, x, v):
        bad = []
        if self.pss is not None:
            pe = (self.g.e_net(x) * self.injection(x, v).conjugate()).real
            vp = pss_derivatives(x[10:], pe / self.to_sys, x[1], self.pss, self.machine.H)[0]
            if not self.pss.Vmin - 1e-12 <= vp <= self.pss.Vmax + 1e-12:
                bad.append(f"{self.name}: PSS output {vp} outside limits")
        return bad
