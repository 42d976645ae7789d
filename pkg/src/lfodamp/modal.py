"""Prony analysis of ringdown signals and damping-ratio bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

#: relative singular-value cutoff for the linear-prediction solve
RCOND = 1e-12
#: roots implying a faster decay/growth than this are numerical artifacts
SIGMA_LIMIT = 100.0


class IllConditioned(ValueError):
    pass


class RootOutOfRange(ValueError):
    pass


class UndefinedRatio(ValueError):
    pass


class NoModeInBand(LookupError):
    pass


@dataclass(frozen=True)
class Mode:
    sigma: float
    omega: float
    amplitude: float = 1.0
    phase: float = 0.0

    @property
    def zeta(self) -> float:
        return damping_ratio(self.sigma, self.omega)

    @property
    def freq_hz(self) -> float:
        return self.omega / (2 * math.pi)

    @property
    def energy(self) -> float:
        a2 = self.amplitude ** 2
        return a2 / abs(2 * self.sigma) if self.sigma < 0 else a2

    @property
    def eigenvalue(self) -> complex:
        return complex(self.sigma, self.omega)


@dataclass
class TimeSeries:
    dt: float
    channels: dict[str, np.ndarray] = field(default_factory=dict)
    t0: float = 0.0

    def __post_init__(self):
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise ValueError(f"channels have unequal lengths {sorted(lengths)}")

    def __len__(self):
        return len(next(iter(self.channels.values()))) if self.channels else 0

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    def window(self, t_start: float, length: float) -> "TimeSeries":
        i0 = int(round((t_start - self.t0) / self.dt))
        i0 = max(i0, 0)
        i1 = min(len(self), i0 + int(round(length / self.dt)) + 1)
        return TimeSeries(self.dt, {k: v[i0:i1] for k, v in self.channels.items()},
                          self.t0 + i0 * self.dt)


def damping_ratio(sigma: float, omega: float) -> float:
    if sigma == 0.0 and omega == 0.0:
        raise UndefinedRatio("damping ratio is undefined at the origin")
    return -sigma / math.hypot(sigma, omega)


def prony(signal: Sequence[float], dt: float, order: int) -> list[Mode]:
    """Fit ``signal`` as a sum of ``order`` complex exponentials.

    Linear-prediction coefficients come from a least-squares solve truncated
    at ``RCOND`` (minimum norm when the data has fewer poles than ``order``),
    the poles from the characteristic polynomial, and the residues from a
    Vandermonde least-squares fit. Conjugate pairs are reported once, with
    ``omega > 0`` and the pair's peak amplitude. Sorted by decreasing energy.
    """
    y = np.asarray(signal, dtype=float)
    n = y.size
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if order < 2 or order % 2:
        raise ValueError(f"order must be even and >= 2, got {order}")
    if n < 3 * order:
        raise IllConditioned(f"{n} samples is too short for order {order} (need >= {3 * order})")

    # y[k] = -sum_j a_j y[k-j]
    A = np.column_stack([y[order - j:n - j] for j in range(1, order + 1)])
    rhs = -y[order:]
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0:
        raise IllConditioned("signal is identically zero")
    a, *_ = np.linalg.lstsq(A, rhs, rcond=RCOND)
    z = np.roots(np.r_[1.0, a])
    z = z[np.abs(z) > 0]
    lam = np.log(z.astype(complex)) / dt
    keep = np.abs(lam.real) <= SIGMA_LIMIT
    if not keep.any():
        raise RootOutOfRange("every root implies |sigma| > %g 1/s" % SIGMA_LIMIT)
    z, lam = z[keep], lam[keep]

    V = np.vander(z, n, increasing=True).T
    b, *_ = np.linalg.lstsq(V, y.astype(complex), rcond=None)

    modes = []
    for lk, bk in zip(lam, b):
        if lk.imag < -1e-12 * max(1.0, abs(lk)):
            continue  # conjugate partner of a reported root
        pair = abs(lk.imag) > 1e-12 * max(1.0, abs(lk))
        amp = 2 * abs(bk) if pair else abs(bk) * (1.0 if bk.real >= 0 else -1.0)
        modes.append(Mode(float(lk.real), float(abs(lk.imag)) if pair else 0.0,
                          float(abs(amp)), float(np.angle(bk))))
    modes.sort(key=lambda m: (-m.energy, m.sigma, m.omega))
    return modes


def reconstruct(modes: Sequence[Mode], t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t, dtype=float)
    for m in modes:
        env = m.amplitude * np.exp(m.sigma * t)
        out += env * np.cos(m.omega * t + m.phase) if m.omega > 0 else env * math.cos(m.phase)
    return out


def detrend(y: np.ndarray) -> np.ndarray:
    t = np.arange(y.size, dtype=float)
    coef = np.polyfit(t, y, 1)
    return y - np.polyval(coef, t)


def dominant_mode(modes: Sequence[Mode], f_lo: float = 0.2, f_hi: float = 2.0) -> Mode:
    if not modes:
        raise NoModeInBand("no modes supplied")
    band = [m for m in modes if m.omega > 0 and f_lo <= m.freq_hz <= f_hi]
    if not band:
        raise NoModeInBand(f"no mode between {f_lo} and {f_hi} Hz")
    return max(band, key=lambda m: m.energy)


def subsample(y: np.ndarray, dt: float, rate: float | None) -> tuple[np.ndarray, float]:
    """Keep every k-th sample so the rate is close to ``rate`` Hz (never below it).

    Dense sampling crowds the poles near ``z = 1`` and makes the
    linear-prediction fit sensitive to rounding-level noise.
    """
    if rate is None:
        return np.asarray(y), dt
    if not rate > 0:
        raise ValueError("rate must be > 0")
    k = max(1, int(1.0 / (rate * dt) + 1e-9))
    return np.asarray(y)[::k], dt * k


def ringdown_mode(y: np.ndarray, dt: float, order: int = 8, f_lo: float = 0.2,
                  f_hi: float = 2.0, rel_floor: float = 1e-6) -> Mode:
    """Detrend, fit and pick the dominant in-band mode of a ringdown window."""
    y = np.asarray(y, dtype=float)
    if y.size < 3 * order:
        raise IllConditioned(f"{y.size} samples is too short for order {order} (need >= {3 * order})")
    y = detrend(y)
    if np.max(np.abs(y)) < rel_floor:
        raise NoModeInBand("signal carries no oscillation")
    return dominant_mode(prony(y, dt, order), f_lo, f_hi)


@dataclass(frozen=True)
class RankRow:
    strategy: str
    sigma: float
    omega: float
    zeta_pct: float


def rank_strategies(results: Mapping[str, Mode]) -> list[RankRow]:
    if not results:
        raise ValueError("nothing to rank")
    rows = [RankRow(name, m.sigma, m.omega, 100.0 * m.zeta) for name, m in results.items()]
    rows.sort(key=lambda r: (-r.zeta_pct, r.strategy))
    return rows
