import numpy as np
import pytest

from lfodamp.network import (PQ, PV, SLACK, Branch, Bus, DisconnectedNetwork, PowerFlowDiverged,
                             PowerSystem, ZiLoad, apply_fault, build_admittance, network_solution,
                             solve_power_flow, zi_load_current)


def two_bus(load=None, x=0.1):
    buses = [Bus(1, SLACK), Bus(2, PQ)]
    return PowerSystem(buses, [Branch(1, 2, 0.0, x)], [load] if load else [])


def test_single_branch_admittance():
    Y = build_admittance([Bus(1), Bus(2)], [Branch(1, 2, 0, 0.1)])
    assert np.allclose(Y, [[-10j, 10j], [10j, -10j]])


def test_parallel_branches_and_scale():
    buses = [Bus(1), Bus(2)]
    Y = build_admittance(buses, [Branch(1, 2, 0, 0.2), Branch(1, 2, 0, 0.2)])
    assert Y[0, 1] == pytest.approx(10j)
    Ys = build_admittance(buses, [Branch(1, 2, 0, 0.2, scale=2.0), Branch(1, 2, 0, 0.2, scale=2.0)])
    assert abs(Ys[0, 1]) == pytest.approx(abs(Y[0, 1]) / 2)


def test_row_sums_equal_shunt():
    Y = build_admittance([Bus(1), Bus(2), Bus(3)],
                         [Branch(1, 2, 0.01, 0.1, b_shunt=0.2), Branch(2, 3, 0.02, 0.3)])
    assert np.allclose(Y.sum(axis=1), [0.1j, 0.1j, 0])
    assert np.allclose(Y, Y.T)


def test_disconnected():
    with pytest.raises(DisconnectedNetwork):
        build_admittance([Bus(1), Bus(2), Bus(3)], [Branch(1, 2, 0, 0.1)])


def test_zero_branch_reactance_rejected():
    with pytest.raises(ValueError):
        Branch(1, 2, 0.0, 0.0)


def test_power_flow_flat_when_unloaded():
    vm, va = solve_power_flow(two_bus())
    assert np.allclose(vm, 1.0) and np.allclose(va, 0.0)


def test_power_flow_two_bus_residual():
    system = two_bus(ZiLoad(2, 100.0, 0.0))
    vm, va = solve_power_flow(system)
    V = vm * np.exp(1j * va)
    S = V * np.conj(system.admittance() @ V)
    assert abs(S[1] - (-1.0)) < 1e-8
    assert system.bus(1).p_gen_mw == pytest.approx(S[0].real * 100)


def test_power_flow_pv_bus_holds_voltage():
    buses = [Bus(1, SLACK), Bus(2, PV, v_mag=1.02, p_gen_mw=50), Bus(3, PQ)]
    br = [Branch(1, 3, 0.01, 0.1), Branch(2, 3, 0.01, 0.1)]
    system = PowerSystem(buses, br, [ZiLoad(3, 120, 30)])
    vm, va = solve_power_flow(system)
    assert vm[1] == pytest.approx(1.02)
    V = vm * np.exp(1j * va)
    S = V * np.conj(system.admittance() @ V)
    assert S[1].real == pytest.approx(0.5, abs=1e-8)
    assert S[2] == pytest.approx(-1.2 - 0.3j, abs=1e-8)


def test_power_flow_diverges_when_infeasible():
    with pytest.raises(PowerFlowDiverged):
        solve_power_flow(two_bus(ZiLoad(2, 5000.0, 0.0), x=0.5))


def test_zi_load_rated_point():
    ld = ZiLoad(1, 100, 50, v0=1.05)
    v = 1.05 + 0j
    assert zi_load_current(ld, v) == pytest.approx(np.conj((1.0 + 0.5j) / v))


def test_zi_load_scaling_laws():
    ld = ZiLoad(1, 100, 50, v0=1.0)
    i_full = zi_load_current(ld, 1.0 + 0j)
    i_half = zi_load_current(ld, 0.5 + 0j)
    assert i_half.real == pytest.approx(i_full.real)
    # Q scales with v^2: the reactive current halves, a quarter of the constant-power value
    assert i_half.imag == pytest.approx(0.5 * i_full.imag)
    assert (0.5 * np.conj(i_half)).imag == pytest.approx(0.25 * 0.5)


def test_zi_load_empty_and_low_voltage():
    assert zi_load_current(ZiLoad(1, 0, 0), 0.9 + 0j) == 0
    ld = ZiLoad(1, 100, 0)
    assert abs(zi_load_current(ld, 0.1 + 0j)) == pytest.approx(0.5)  # linear below 0.2 pu


def test_fault_involution_and_depth():
    system = two_bus()
    Y = system.admittance()
    Yf = apply_fault(Y, 1)
    assert Yf[1, 1] != Y[1, 1]
    assert np.array_equal(Y, system.admittance())
    with pytest.raises(IndexError):
        apply_fault(Y, 5)
    # source behind j0.2 at bus 0: the faulted bus collapses
    v = network_solution(Yf, [(0, 1.0 / 0.2j, 1.0 / 0.2j)])
    assert abs(v[1]) < 0.05


def test_network_solution_thevenin():
    Y = build_admittance([Bus(1), Bus(2)], [Branch(1, 2, 0, 0.1)])
    zs, e, zl = 0.2j, 1.0, 2.0
    ys = 1 / zs
    Y[1, 1] += 1 / zl
    v = network_solution(Y, [(0, e * ys, ys)])
    assert v[1] == pytest.approx(e * zl / (zs + 0.1j + zl), abs=1e-9)


def test_network_solution_needs_source():
    with pytest.raises(ValueError):
        network_solution(np.eye(2, dtype=complex), [])


def test_network_solution_with_zi_load_matches_power_flow():
    ld = ZiLoad(2, 80, 20)
    system = two_bus(ld)
    solve_power_flow(system)
    V_pf = system.voltages
    ld.v0 = abs(V_pf[1])
    # slack as a stiff source behind a tiny impedance reproducing its voltage
    ys = 1e6
    v = network_solution(system.admittance(), [(0, V_pf[0] * ys, ys)], [(1, ld)])
    assert np.max(np.abs(v - V_pf)) < 1e-5
