"""Two-area system construction and the time-domain simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..device import Device
from ..gfl import GflPlant
from ..gfm import GfmPlant
from ..machines import PssParams, SyncGenerator
from ..network import (PQ, PV, SLACK, Branch, Bus, NetworkSolver, PowerSystem, ZiLoad,
                       apply_fault, solve_power_flow)
from ..numerics import heun_step
from .config import ScenarioConfig

SG1_BUS, AREA1_BUS, AREA2_BUS, SG2_BUS, CIG_BUS = 1, 2, 3, 4, 5
TIE = (AREA1_BUS, AREA2_BUS)


class InitializationError(RuntimeError):
    pass


@dataclass
class TwoArea:
    system: PowerSystem
    devices: list[Device] = field(default_factory=list)

    def device(self, name: str) -> Device:
        for d in self.devices:
            if d.name == name:
                return d
        raise KeyError(name)


def _pss_params(cfg: ScenarioConfig) -> PssParams | None:
    return cfg.pss if cfg.strategy == "pss" else None


def build_two_area(cfg: ScenarioConfig) -> TwoArea:
    """Network, solved power flow and (uninitialised) devices for ``cfg``."""
    nd = cfg.network
    base = nd.base_mva
    sg1_mw = nd.sg1_mw if cfg.has_cig else nd.sg1_mw_no_cig
    buses = [
        Bus(SG1_BUS, PV, v_mag=nd.v_sg1, base_kv=20.0, p_gen_mw=sg1_mw, name="SG1"),
        Bus(AREA1_BUS, PQ, base_kv=nd.base_kv, name="Area1"),
        Bus(AREA2_BUS, PQ, base_kv=nd.base_kv, name="Area2"),
        Bus(SG2_BUS, SLACK, v_mag=nd.v_sg2, base_kv=20.0, p_gen_mw=nd.sg2_mw, name="SG2"),
    ]
    tie_r, tie_x, tie_b = nd.r_km * nd.tie_km, nd.x_km * nd.tie_km, nd.b_km * nd.tie_km
    branches = [
        Branch(SG1_BUS, AREA1_BUS, 0.0, nd.x_tr * base / nd.sg1_mva, name="T1"),
        Branch(SG2_BUS, AREA2_BUS, 0.0, nd.x_tr * base / nd.sg2_mva, name="T2"),
        Branch(AREA1_BUS, AREA2_BUS, tie_r, tie_x, tie_b, scale=cfg.tie_scale, name="tie_a"),
        Branch(AREA1_BUS, AREA2_BUS, tie_r, tie_x, tie_b, scale=cfg.tie_scale, name="tie_b"),
    ]
    if cfg.has_cig:
        buses.append(Bus(CIG_BUS, PQ, base_kv=0.69, p_gen_mw=nd.cig_mw, name="CIG"))
        branches.append(Branch(CIG_BUS, AREA1_BUS, 0.0, nd.x_tr_cig * base / nd.cig_mva, name="T3"))
    loads = [ZiLoad(AREA1_BUS, nd.load1_mw, nd.load1_mvar, name="L1"),
             ZiLoad(AREA2_BUS, nd.load2_mw, nd.load2_mvar, name="L2")]
    system = PowerSystem(buses, branches, loads, base_mva=base, f_nom=nd.f_nom)
    solve_power_flow(system)
    # ZI loads draw their scheduled power at the solved voltage
    for ld in system.loads:
        ld.v0 = system.bus(ld.bus).v_mag

    machine = cfg.machine
    devices: list[Device] = [
        SyncGenerator("SG1", SG1_BUS, replace(machine, mva_base=nd.sg1_mva), cfg.exciter, cfg.governor,
                      _pss_params(cfg), system_mva=base),
        SyncGenerator("SG2", SG2_BUS, replace(machine, mva_base=nd.sg2_mva), cfg.exciter, cfg.governor,
                      None, system_mva=base),
    ]
    gfm = cfg.gfm_params()
    if gfm is not None:
        devices.append(GfmPlant("CIG", CIG_BUS, nd.cig_mva, gfm, system_mva=base))
    elif cfg.has_cig:
        devices.append(GflPlant("CIG", CIG_BUS, nd.cig_mva, cfg.ppc, cfg.pod_params(),
                                poi=AREA1_BUS, system_mva=base))
    for d in devices:
        d.bus_idx = system.bus_index(d.bus)
        if isinstance(d, GflPlant):
            d.poi_idx = system.bus_index(d.poi)
    return TwoArea(system, devices)


class Measurements:
    """Network quantities visible to device controllers."""

    def __init__(self, system: PowerSystem, tie: tuple[int, int] = TIE):
        self.v = system.voltages
        self._ia, self._ib = system.bus_index(tie[0]), system.bus_index(tie[1])
        brs = system.branches_between(*tie)
        self._y_series = sum(br.y_series for br in brs)
        self._y_half = sum(0.5j * br.b_shunt for br in brs)

    def tie_flow(self) -> complex:
        """Complex power leaving the area-1 end of the tie, system pu."""
        va, vb = self.v[self._ia], self.v[self._ib]
        return va * np.conj((va - vb) * self._y_series + va * self._y_half)


@dataclass
class StepEvent:
    step: int
    action: str
    value: float = 0.0


class Simulator:
    """Heun integration of all device states with an algebraic network solve.

    The network is re-solved at every derivative evaluation; devices see the
    resulting voltages through :class:`Measurements`.
    """

    def __init__(self, plant: TwoArea, cfg: ScenarioConfig):
        self.plant = plant
        self.cfg = cfg
        self.dt = cfg.dt
        sysm = plant.system
        self.system = sysm
        self.n_bus = len(sysm.buses)
        self.Y_base = sysm.admittance()
        self.Y = self.Y_base
        self.meas = Measurements(sysm)
        self.v_pf = sysm.voltages

        self.slices = []
        start = 0
        for d in plant.devices:
            self.slices.append(slice(start, start + d.n_states))
            start += d.n_states
        self.n_states = start

        y_shunt = np.zeros(self.n_bus, dtype=complex)
        for d in plant.devices:
            y_shunt[d.bus_idx] += d.y_src
        self.loads = [ZiLoad(ld.bus, ld.p0, ld.q0, ld.v0, ld.name) for ld in sysm.loads]
        self.solver = NetworkSolver(self.Y_base, y_shunt, self._load_pairs(),
                                    base_mva=sysm.base_mva, v_low=cfg.network.v_low)
        self.v = self.v_pf.copy()
        self.x0 = self._initialise()

    def _load_pairs(self):
        return [(self.system.bus_index(ld.bus), ld) for ld in self.loads]

    def _initialise(self) -> np.ndarray:
        sysm = self.system
        s_inj = self.v_pf * np.conj(self.Y_base @ self.v_pf) * sysm.base_mva
        x = np.empty(self.n_states)
        self.meas.v = self.v_pf
        for d, sl in zip(self.plant.devices, self.slices):
            i = d.bus_idx
            s_load = sum(complex(ld.p0, ld.q0) for ld in sysm.loads if ld.bus == d.bus)
            s = (s_inj[i] + s_load) / sysm.base_mva
            try:
                x[sl] = d.init(self.v_pf[i], s, self.meas)
            except ValueError as exc:
                raise InitializationError(str(exc)) from exc
        return x

    # network ---------------------------------------------------------------

    def sources(self, x):
        def fn(v):
            out = np.zeros(self.n_bus, dtype=complex)
            for d, sl in zip(self.plant.devices, self.slices):
                out[d.bus_idx] += d.current_source(x[sl], v[d.bus_idx])
            return out
        return fn

    def solve_network(self, x) -> np.ndarray:
        self.v = self.solver.solve(self.sources(x), self.v)
        self.meas.v = self.v
        return self.v

    def derivatives(self, x) -> np.ndarray:
        v = self.solve_network(x)
        dx = np.empty_like(x)
        for d, sl in zip(self.plant.devices, self.slices):
            dx[sl] = d.derivatives(x[sl], v[d.bus_idx], self.meas)
        return dx

    def balance_residual(self, x) -> float:
        """|generation - load - losses| in system pu at the current solution."""
        v = self.v
        i_dev = np.zeros(self.n_bus, dtype=complex)
        for d, sl in zip(self.plant.devices, self.slices):
            i_dev[d.bus_idx] += d.injection(x[sl], v[d.bus_idx])
        gen = np.sum(v * np.conj(i_dev))
        load = np.sum(v * np.conj(self.solver.load_current(v)))
        loss = np.sum(v * np.conj(self.Y @ v))
        return float(abs(gen - load - loss))

    # events ----------------------------------------------------------------

    def events(self) -> list[StepEvent]:
        d = self.cfg.disturbance
        k_on = int(round(d.t_on / self.dt))
        if d.kind == "fault":
            k_off = k_on + max(1, int(round(d.duration / self.dt)))
            return [StepEvent(k_on, "fault_on", d.fault_admittance), StepEvent(k_off, "fault_off")]
        if d.kind == "load_step":
            return [StepEvent(k_on, "load_step", d.delta_mw)]
        return []

    def apply(self, ev: StepEvent):
        d = self.cfg.disturbance
        if ev.action == "fault_on":
            self.Y = apply_fault(self.Y_base, self.system.bus_index(d.bus), ev.value)
            self.solver.refactor(self.Y)
        elif ev.action == "fault_off":
            self.Y = self.Y_base
            self.solver.refactor(self.Y)
        elif ev.action == "load_step":
            ld = next(ld for ld in self.loads if ld.bus == d.bus)
            ld.p0 += ev.value
            self.solver.set_loads(self._load_pairs())
        else:
            raise ValueError(ev.action)

    # recording -------------------------------------------------------------

    def channel_names(self) -> list[str]:
        names = ["tie_p", "tie_q", "v_area1", "v_area2"]
        for d in self.plant.devices:
            key = d.name.lower()
            names += [f"{key}_{k}" for k in d.record(self.x0[self._slice(d)], self.v_pf[d.bus_idx],
                                                     self.meas)]
        return names

    def _slice(self, dev):
        return self.slices[self.plant.devices.index(dev)]

    def sample(self, x) -> list[float]:
        base = self.system.base_mva
        v = self.v
        tie = self.meas.tie_flow() * base
        row = [tie.real, tie.imag, abs(v[self.system.bus_index(AREA1_BUS)]),
               abs(v[self.system.bus_index(AREA2_BUS)])]
        for d, sl in zip(self.plant.devices, self.slices):
            rec = d.record(x[sl], v[d.bus_idx], self.meas)
            row += [val * base if k in ("p", "q") else val for k, val in rec.items()]
        return row

    def rotor_separation(self, x) -> float:
        sg = [(d, sl) for d, sl in zip(self.plant.devices, self.slices) if isinstance(d, SyncGenerator)]
        return abs(x[sg[0][1]][0] - x[sg[1][1]][0])

    def violations(self, x) -> list[str]:
        out = []
        for d, sl in zip(self.plant.devices, self.slices):
            out += d.check(x[sl], self.v[d.bus_idx])
        return out

    def step(self, x) -> np.ndarray:
        x = heun_step(x, self.derivatives, self.dt)
        for d, sl in zip(self.plant.devices, self.slices):
            d.clamp(x[sl])
        self.solve_network(x)
        return x


def flat_start_residual(sim: Simulator) -> tuple[float, float]:
    """``(max |dx/dt|, max |V - V_pf|)`` at the initial point."""
    dx = sim.derivatives(sim.x0)
    return float(np.max(np.abs(dx))), float(np.max(np.abs(sim.v - sim.v_pf)))


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi
