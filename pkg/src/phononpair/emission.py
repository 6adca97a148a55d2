"""Per-pulse emission means and arrival-time samplers shared by protocol and detection."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Literal

import numpy as np

Statistics = Literal["thermal", "poisson"]


@dataclass(frozen=True)
class EmissionProfile:
    """Expected signal-band photon numbers per trial for one pulse, split by origin.

    ``pair`` counts photons (two per pair event). ``leakage`` is residual pump
    light passing the filters and is always Poissonian.
    """

    pulse: int
    duration: float
    pair: float = 0.0
    stokes: float = 0.0
    anti_stokes: float = 0.0
    heating: float = 0.0
    leakage: float = 0.0
    kappa: float = np.inf
    heating_t_s: float = np.inf
    heating_t_l: float = np.inf

    def __post_init__(self):
        for name in ("pair", "stokes", "anti_stokes", "heating", "leakage"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.pair / 2.0 > 1.0:
            raise ValueError("pair branch probability exceeds one")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    @property
    def pair_probability(self) -> float:
        return self.pair / 2.0

    @property
    def total(self) -> float:
        return self.pair + self.stokes + self.anti_stokes + self.heating + self.leakage

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def sample_counts(mean: float, statistics: Statistics, rng: np.random.Generator, size: int) -> np.ndarray:
    """Single-mode thermal (Bose) or Poisson photon numbers."""
    if mean <= 0:
        return np.zeros(size, dtype=np.int64)
    if statistics == "thermal":
        return rng.geometric(1.0 / (1.0 + mean), size).astype(np.int64) - 1
    if statistics == "poisson":
        return rng.poisson(mean, size).astype(np.int64)
    raise ValueError(f"unknown statistics {statistics!r}")


def _fold(t: np.ndarray, duration: float) -> np.ndarray:
    return np.minimum(t, np.nextafter(duration, 0.0))


def cavity_delay(rng: np.random.Generator, n: int, kappa: float) -> np.ndarray:
    if not np.isfinite(kappa):
        return np.zeros(n)
    return rng.exponential(1.0 / kappa, n)


def uniform_times(rng, n: int, duration: float, kappa: float = np.inf) -> np.ndarray:
    return _fold(rng.uniform(0.0, duration, n) + cavity_delay(rng, n, kappa), duration)


def decaying_times(rng, n: int, duration: float, rate: float, kappa: float = np.inf) -> np.ndarray:
    """Conversion times with density ``rate*exp(-rate t)`` truncated to the pulse."""
    if rate <= 0:
        return uniform_times(rng, n, duration, kappa)
    u = rng.random(n)
    t = -np.log1p(-u * (-np.expm1(-rate * duration))) / rate
    return _fold(t + cavity_delay(rng, n, kappa), duration)


def _rise_cdf(duration: float, t_s: float, t_l: float, grid: int = 2048):
    t = np.linspace(0.0, duration, grid)
    dens = (1.0 - np.exp(-t / t_s)) * np.exp(-t / t_l)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(t))])
    return t, cdf


def rise_integral(tau, t_s: float, t_l: float):
    """``int_0^tau (1 - exp(-t/t_s)) exp(-t/t_l) dt`` in closed form."""
    tau = np.asarray(tau, dtype=float)
    r = 1.0 / t_s + 1.0 / t_l
    return t_l * (-np.expm1(-tau / t_l)) - (-np.expm1(-r * tau)) / r


def heating_times(rng, n: int, duration: float, t_s: float, t_l: float, kappa: float = np.inf) -> np.ndarray:
    """Arrival times of photons scattered off phonons heated during the pulse."""
    if not np.isfinite(t_s):
        return uniform_times(rng, n, duration, kappa)
    t, cdf = _rise_cdf(duration, t_s, t_l)
    u = rng.random(n) * cdf[-1]
    return _fold(np.interp(u, cdf, t) + cavity_delay(rng, n, kappa), duration)
