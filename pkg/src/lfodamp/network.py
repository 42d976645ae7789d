"""Bus/branch network: admittance assembly, power flow and per-step solution.

All quantities are per unit on the system MVA base unless a field name says
otherwise (``*_mw``, ``*_mvar``). Bus voltages are complex phasors in the
synchronously rotating network frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .numerics import LU, SingularMatrix

SLACK, PV, PQ = "slack", "pv", "pq"

#: shunt conductance used for a solid three-phase-to-ground fault
SOLID_FAULT_ADMITTANCE = 1e5


class DisconnectedNetwork(ValueError):
    pass


class PowerFlowDiverged(RuntimeError):
    pass


class NetworkSolutionDiverged(RuntimeError):
    pass


@dataclass
class Bus:
    id: int
    kind: str = PQ
    v_mag: float = 1.0
    v_ang: float = 0.0
    base_kv: float = 230.0
    p_gen_mw: float = 0.0
    q_gen_mvar: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.kind not in (SLACK, PV, PQ):
            raise ValueError(f"bus {self.id}: unknown kind {self.kind!r}")

    @property
    def voltage(self) -> complex:
        return self.v_mag * np.exp(1j * self.v_ang)


@dataclass
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0
    in_service: bool = True
    scale: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.in_service and self.x == 0.0:
            raise ValueError(f"branch {self.name or (self.from_bus, self.to_bus)}: x must be nonzero")
        if not self.scale > 0.0:
            raise ValueError("branch scale must be > 0")

    @property
    def y_series(self) -> complex:
        return 1.0 / (self.scale * complex(self.r, self.x))


@dataclass
class ZiLoad:
    """Constant-current active power, constant-impedance reactive power."""

    bus: int
    p0: float
    q0: float = 0.0
    v0: float = 1.0
    name: str = ""


@dataclass
class PowerSystem:
    buses: list[Bus]
    branches: list[Branch]
    loads: list[ZiLoad] = field(default_factory=list)
    base_mva: float = 100.0
    f_nom: float = 60.0

    def __post_init__(self):
        self._index = {b.id: i for i, b in enumerate(self.buses)}
        if len(self._index) != len(self.buses):
            raise ValueError("duplicate bus ids")

    def bus_index(self, bus_id: int) -> int:
        try:
            return self._index[bus_id]
        except KeyError:
            raise KeyError(f"no bus with id {bus_id}") from None

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.bus_index(bus_id)]

    @property
    def voltages(self) -> np.ndarray:
        return np.array([b.voltage for b in self.buses])

    def admittance(self) -> np.ndarray:
        return build_admittance(self.buses, self.branches)

    def branches_between(self, a: int, b: int) -> list[Branch]:
        return [br for br in self.branches
                if {br.from_bus, br.to_bus} == {a, b} and br.in_service]

    def branch_flow(self, a: int, b: int, v: np.ndarray) -> complex:
        """Complex power leaving bus ``a`` toward ``b`` over all parallel in-service branches."""
        ia, ib = self.bus_index(a), self.bus_index(b)
        s = 0j
        for br in self.branches_between(a, b):
            ys = br.y_series
            i_ab = (v[ia] - v[ib]) * ys + v[ia] * 0.5j * br.b_shunt
            s += v[ia] * np.conj(i_ab)
        return s


def build_admittance(buses: Sequence[Bus], branches: Iterable[Branch]) -> np.ndarray:
    index = {b.id: i for i, b in enumerate(buses)}
    n = len(index)
    Y = np.zeros((n, n), dtype=complex)
    rows, cols = [], []
    for br in branches:
        if not br.in_service:
            continue
        try:
            i, k = index[br.from_bus], index[br.to_bus]
        except KeyError as exc:
            raise KeyError(f"branch endpoint {exc.args[0]} does not exist") from None
        ys = br.y_series
        ysh = 0.5j * br.b_shunt
        Y[i, i] += ys + ysh
        Y[k, k] += ys + ysh
        Y[i, k] -= ys
        Y[k, i] -= ys
        rows += [i, k]
        cols += [k, i]
    if not rows:
        raise DisconnectedNetwork("no branch in service")
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    ncomp, labels = connected_components(graph, directed=False)
    if ncomp > 1:
        islands = [[b.id for b, lab in zip(buses, labels) if lab == c] for c in range(ncomp)]
        raise DisconnectedNetwork(f"network splits into islands {islands}")
    return Y


def _dS_dV(Y, V):
    Ibus = Y @ V
    Vn = V / np.abs(V)
    dVm = np.diag(V) @ np.conj(Y @ np.diag(Vn)) + np.diag(np.conj(Ibus) * Vn)
    dVa = 1j * np.diag(V) @ np.conj(np.diag(Ibus) - Y @ np.diag(V))
    return dVm, dVa


def solve_power_flow(system: PowerSystem, tol: float = 1e-8, max_iter: int = 20,
                     Y: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Newton-Raphson power flow with loads treated as constant PQ.

    Writes the solution into ``system.buses`` (including the slack P and the
    PV/slack Q generation) and returns ``(v_mag, v_ang)``.
    """
    buses = system.buses
    base = system.base_mva
    if Y is None:
        Y = system.admittance()
    kinds = [b.kind for b in buses]
    if kinds.count(SLACK) != 1:
        raise ValueError(f"expected exactly one slack bus, found {kinds.count(SLACK)}")

    n = len(buses)
    s_spec = np.array([complex(b.p_gen_mw, b.q_gen_mvar) for b in buses]) / base
    for ld in system.loads:
        s_spec[system.bus_index(ld.bus)] -= complex(ld.p0, ld.q0) / base

    pv = [i for i, k in enumerate(kinds) if k == PV]
    pq = [i for i, k in enumerate(kinds) if k == PQ]
    pvpq = pv + pq
    vm = np.array([b.v_mag if b.kind != PQ else 1.0 for b in buses])
    va = np.array([b.v_ang if b.kind == SLACK else 0.0 for b in buses])
    va[:] = va[kinds.index(SLACK)]

    def mismatch(vm, va):
        V = vm * np.exp(1j * va)
        mis = V * np.conj(Y @ V) - s_spec
        return V, np.r_[mis.real[pvpq], mis.imag[pq]]

    V, F = mismatch(vm, va)
    for it in range(max_iter + 1):
        if np.max(np.abs(F), initial=0.0) < tol:
            break
        if it == max_iter:
            worst = np.argmax(np.abs(F))
            bus = buses[(pvpq + pq)[worst]]
            raise PowerFlowDiverged(
                f"no convergence after {max_iter} iterations; worst mismatch "
                f"{np.abs(F[worst]):.3e} pu at bus {bus.id}")
        dVm, dVa = _dS_dV(Y, V)
        J = np.block([
            [dVa[np.ix_(pvpq, pvpq)].real, dVm[np.ix_(pvpq, pq)].real],
            [dVa[np.ix_(pq, pvpq)].imag, dVm[np.ix_(pq, pq)].imag],
        ])
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowDiverged(f"singular Jacobian at iteration {it}") from exc
        va[pvpq] += dx[:len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        V, F = mismatch(vm, va)

    s_inj = V * np.conj(Y @ V)
    for i, b in enumerate(buses):
        b.v_mag, b.v_ang = float(vm[i]), float(va[i])
        if b.kind in (SLACK, PV):
            s_load = sum(complex(ld.p0, ld.q0) for ld in system.loads if ld.bus == b.id)
            s_gen = s_inj[i] * base + s_load
            b.q_gen_mvar = float(s_gen.imag)
            if b.kind == SLACK:
                b.p_gen_mw = float(s_gen.real)
    return vm.copy(), va.copy()


def _zi_parts(load: ZiLoad, base_mva: float):
    p = load.p0 / base_mva
    q = load.q0 / base_mva
    return p / load.v0, -1j * q / load.v0 ** 2


def zi_load_current(load: ZiLoad, v: complex, base_mva: float = 100.0,
                    v_low: float = 0.2) -> complex:
    """Current drawn by a ZI load at terminal voltage ``v`` (system per unit).

    Below ``v_low`` the constant-current part fades linearly to zero with
    voltage, which keeps the fault-on solution well defined.
    """
    ip_mag, y_q = _zi_parts(load, base_mva)
    vm = abs(v)
    if vm == 0.0:
        return 0j
    ip = ip_mag * v / vm if vm >= v_low else ip_mag * v / v_low
    return ip + y_q * v


def apply_fault(Y: np.ndarray, bus: int, fault_admittance: complex = SOLID_FAULT_ADMITTANCE) -> np.ndarray:
    """Return a copy of ``Y`` with a shunt at bus index ``bus``; ``Y`` is untouched."""
    n = Y.shape[0]
    if not 0 <= bus < n:
        raise IndexError(f"fault bus index {bus} outside 0..{n - 1}")
    Yf = Y.copy()
    Yf[bus, bus] += fault_admittance
    return Yf


class NetworkSolver:
    """Algebraic network solution with Norton devices and ZI loads.

    ``y_shunt`` holds the constant device admittances per bus. Current
    sources may depend on the bus voltage; the solution is iterated until
    the voltage update falls below ``tol``.
    """

    def __init__(self, Y: np.ndarray, y_shunt: np.ndarray, loads: Sequence[tuple[int, ZiLoad]] = (),
                 base_mva: float = 100.0, v_low: float = 0.2, tol: float = 1e-8, fixed_point_iter: int = 40,
                 max_iter: int = 20):
        self.Y = np.asarray(Y, dtype=complex)
        self.y_shunt = np.asarray(y_shunt, dtype=complex)
        self.base_mva = base_mva
        self.v_low = v_low
        self.tol = tol
        self.fixed_point_iter = fixed_point_iter
        self.max_iter = max_iter
        self.set_loads(loads)
        self.iterations = 0

    def set_loads(self, loads: Sequence[tuple[int, ZiLoad]]):
        self.loads = list(loads)
        n = self.Y.shape[0]
        self._load_idx = np.array([i for i, _ in self.loads], dtype=int)
        parts = [_zi_parts(ld, self.base_mva) for _, ld in self.loads]
        self._ip_mag = np.array([p[0] for p in parts], dtype=float)
        y_load = np.zeros(n, dtype=complex)
        for (i, _), (_, yq) in zip(self.loads, parts):
            y_load[i] += yq
        self._y_load = y_load
        self.refactor()

    def refactor(self, Y: np.ndarray | None = None):
        if Y is not None:
            self.Y = np.asarray(Y, dtype=complex)
        A = self.Y + np.diag(self.y_shunt + self._y_load)
        try:
            self._lu = LU(A)
            self._A = A
        except SingularMatrix as exc:
            raise SingularMatrix(f"augmented network matrix is singular: {exc}") from exc

    def load_p_current(self, v: np.ndarray) -> np.ndarray:
        """Constant-current parts of all loads, summed per bus (drawn current)."""
        n = v.shape[0]
        out = np.zeros(n, dtype=complex)
        if self._load_idx.size == 0:
            return out
        vl = v[self._load_idx]
        vm = np.abs(vl)
        scale = np.where(vm >= self.v_low, 1.0 / np.maximum(vm, 1e-300), 1.0 / self.v_low)
        np.add.at(out, self._load_idx, self._ip_mag * vl * scale)
        return out

    def load_current(self, v: np.ndarray) -> np.ndarray:
        return self.load_p_current(v) + self._y_load * v

    def solve(self, sources: Callable[[np.ndarray], np.ndarray], v0: np.ndarray) -> np.ndarray:
        """Solve ``(Y + y_shunt + y_load) v = I_src(v) - I_load_p(v)``."""
        v = np.asarray(v0, dtype=complex)
        for it in range(1, self.fixed_point_iter + 1):
            rhs = sources(v) - self.load_p_current(v)
            v_new = self._lu.solve(rhs)
            if not np.all(np.isfinite(v_new)):
                raise NetworkSolutionDiverged("non-finite bus voltage")
            err = np.max(np.abs(v_new - v))
            v = v_new
            if err < self.tol:
                self.iterations = it
                return v
        # slow contraction (hard current limits): finish with Newton steps
        return self._newton(sources, v)

    def _residual(self, sources, v):
        return self._A @ v - sources(v) + self.load_p_current(v)

    def _newton(self, sources, v):
        n = v.size
        h = 1e-7
        for it in range(1, self.max_iter + 1):
            F = self._residual(sources, v)
            J = np.empty((2 * n, 2 * n))
            for k in range(2 * n):
                dv = np.zeros(n, dtype=complex)
                dv[k % n] = h if k < n else 1j * h
                dF = (self._residual(sources, v + dv) - F) / h
                J[:n, k], J[n:, k] = dF.real, dF.imag
            try:
                step = np.linalg.solve(J, -np.r_[F.real, F.imag])
            except np.linalg.LinAlgError as exc:
                raise NetworkSolutionDiverged("singular network Jacobian") from exc
            dv = step[:n] + 1j * step[n:]
            v = v + dv
            if not np.all(np.isfinite(v)):
                raise NetworkSolutionDiverged("non-finite bus voltage")
            if np.max(np.abs(dv)) < self.tol:
                self.iterations = self.fixed_point_iter + it
                return v
        raise NetworkSolutionDiverged(
            f"network solution did not converge (last update {np.max(np.abs(dv)):.3e})")


def network_solution(Y: np.ndarray, device_nortons: Sequence[tuple[int, object, complex]],
                     loads: Sequence[tuple[int, ZiLoad]] = (), v0: np.ndarray | None = None,
                     base_mva: float = 100.0, tol: float = 1e-8) -> np.ndarray:
    """Solve bus voltages for Norton devices ``(bus_index, I_src, y_src)``.

    ``I_src`` is a complex number or a callable of the device bus voltage.
    """
    if not device_nortons:
        raise ValueError("network_solution needs at least one source device")
    n = Y.shape[0]
    y_shunt = np.zeros(n, dtype=complex)
    for i, _, y in device_nortons:
        y_shunt[i] += y
    solver = NetworkSolver(Y, y_shunt, loads, base_mva=base_mva, tol=tol)

    def sources(v):
        out = np.zeros(n, dtype=complex)
        for i, src, _ in device_nortons:
            out[i] += src(v[i]) if callable(src) else src
        return out

    return solver.solve(sources, np.ones(n, dtype=complex) if v0 is None else v0)
