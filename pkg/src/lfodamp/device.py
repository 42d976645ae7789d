"""Common contract between dynamic devices and the network solution."""

from __future__ import annotations

import numpy as np


class Device:
    """A dynamic device attached to one bus.

    The device injects ``current_source(x, v) - y_src * v`` into its bus, in
    system per unit. ``x`` is the device's slice of the global state vector.
    """

    state_names: tuple[str, ...] = ()
    y_src: complex = 0j

    def __init__(self, name: str, bus: int, mva_base: float, system_mva: float = 100.0):
        self.name = name
        self.bus = bus
        self.mva_base = mva_base
        self.system_mva = system_mva
        # bus index, filled in when the simulator lays out the network
        self.bus_idx = -1

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def to_sys(self) -> float:
        """Multiplier from device-base power/current to system base."""
        return self.mva_base / self.system_mva

    def init(self, v: complex, s: complex, meas) -> np.ndarray:
        raise NotImplementedError

    def current_source(self, x: np.ndarray, v: complex) -> complex:
        raise NotImplementedError

    def injection(self, x: np.ndarray, v: complex) -> complex:
        return self.current_source(x, v) - self.y_src * v

    def derivatives(self, x: np.ndarray, v: complex, meas) -> np.ndarray:
        raise NotImplementedError

    def clamp(self, x: np.ndarray) -> None:
        """Project limited integrator states back inside their limits (in place)."""

    def record(self, x: np.ndarray, v: complex, meas) -> dict[str, float]:
        return {}

    def check(self, x: np.ndarray, v: complex) -> list[str]:
        """Invariant violations at an accepted step (empty when healthy)."""
        return []
