"""Fixed-step integration, complex network algebra and scalar control blocks.

Every controller in the package is built from the block primitives here.
Derivative helpers are pure; the ``*_step`` helpers advance a caller-owned
:class:`BlockState` by one Heun step with the input held over the step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

#: quarter cycle at 60 Hz
DEFAULT_DT = 1.0 / 240.0


class NonFiniteDerivative(FloatingPointError):
    """Raised when a derivative evaluation produces NaN or Inf."""


class InvalidTimeConstant(ValueError):
    """Raised for a non-positive time constant."""


class SingularMatrix(np.linalg.LinAlgError):
    """Raised when a network matrix cannot be factorised."""


@dataclass
class BlockState:
    value: float = 0.0
    derivative: float = 0.0


def _check_tc(T: float, name: str = "T") -> None:
    if not T > 0.0:
        raise InvalidTimeConstant(f"{name} must be > 0, got {T!r}")


def _finite(dx, where: str = "deriv_fn"):
    if not np.all(np.isfinite(dx)):
        bad = np.flatnonzero(~np.isfinite(np.atleast_1d(dx)))
        raise NonFiniteDerivative(f"non-finite derivative from {where} at index {bad.tolist()}")
    return dx


def heun_step(x, deriv_fn: Callable, dt: float):
    """One predictor-corrector (Heun) step.

    ``x`` may be a float or an ndarray; ``deriv_fn(x)`` must return the same
    shape. Returns the new state; ``x`` itself is not modified.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be > 0, got {dt!r}")
    f0 = _finite(deriv_fn(x))
    x_pred = x + dt * f0
    f1 = _finite(deriv_fn(x_pred))
    return x + 0.5 * dt * (f0 + f1)


def first_order_lag_deriv(inp: float, state: float, T: float) -> float:
    _check_tc(T)
    return (inp - state) / T


def washout(inp: float, state: float, Kw: float, Tw: float) -> tuple[float, float]:
    """Return ``(output, dstate)`` of ``Kw*s*Tw/(1+s*Tw)``."""
    _check_tc(Tw, "Tw")
    diff = inp - state
    return Kw * diff, diff / Tw


def washout_step(inp: float, state: BlockState, Kw: float, Tw: float, dt: float) -> float:
    """Output for the current sample, then advance the washout state by ``dt``."""
    if Kw < 0:
        raise ValueError("Kw must be >= 0")
    out, dstate = washout(inp, state.value, Kw, Tw)
    state.derivative = dstate
    state.value = heun_step(state.value, lambda s: (inp - s) / Tw, dt)
    return out


def lead_lag_deriv(inp: float, state: float, T_lead: float, T_lag: float) -> tuple[float, float]:
    """(1 + s*T_lead)/(1 + s*T_lag) with direct feedthrough.

    Returns ``(output, dstate)``.
    """
    _check_tc(T_lag, "T_lag")
    if T_lead < 0:
        raise InvalidTimeConstant(f"T_lead must be >= 0, got {T_lead!r}")
    diff = inp - state
    return state + (T_lead / T_lag) * diff, diff / T_lag


def deadband(inp: float, width: float) -> float:
    """Continuous deadband: zero inside the band, shifted toward zero outside."""
    if inp > width:
        return inp - width
    if inp < -width:
        return inp + width
    return 0.0


def limit(value: float, lo: float, hi: float) -> float:
    return lo if value < lo else hi if value > hi else value


def antiwindup(value: float, dvalue: float, lo: float, hi: float) -> float:
    """Zero an integrator derivative that pushes the state further past a limit."""
    if (value >= hi and dvalue > 0.0) or (value <= lo and dvalue < 0.0):
        return 0.0
    return dvalue


def lag_step(inp: float, state: BlockState, T: float, dt: float,
             lo: float = -np.inf, hi: float = np.inf) -> float:
    """Advance a (optionally non-windup limited) first-order lag; returns the new output."""
    _check_tc(T)

    def f(s):
        return antiwindup(s, (inp - s) / T, lo, hi)

    state.derivative = f(state.value)
    state.value = limit(heun_step(state.value, f, dt), lo, hi)
    return state.value


def lead_lag_step(inp: float, state: BlockState, T_lead: float, T_lag: float, dt: float) -> float:
    out, dstate = lead_lag_deriv(inp, state.value, T_lead, T_lag)
    state.derivative = dstate
    state.value = heun_step(state.value, lambda s: (inp - s) / T_lag, dt)
    return out


class LU:
    """Cached LU factorisation of a complex square matrix."""

    def __init__(self, A: np.ndarray):
        A = np.asarray(A, dtype=complex)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
            raise ValueError(f"expected a non-empty square matrix, got shape {A.shape}")
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
        diag = np.abs(np.diag(lu))
        if diag.min() <= 1e-13 * max(diag.max(), 1.0):
            raise SingularMatrix(f"matrix is singular (min pivot {diag.min():.3e})")
        self._factors = (lu, piv)
        self.n = A.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self._factors, b, check_finite=False)


def solve_linear_complex(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=complex)
    A = np.asarray(A, dtype=complex)
    if A.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, b is {b.shape}")
    return LU(A).solve(b)
