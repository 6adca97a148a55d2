"""Two-tone optomechanical interaction, pulse propagators and closed-form amplitudes."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .fockspace import (
    DimensionError,
    StateVector,
    apply,
    expm,
    is_hermitian,
    mode_operators,
)

TWO_PI = 2.0 * math.pi
PERTURBATIVE_LIMIT = 0.2
LEAKAGE_LIMIT = 1e-3

Ordering = Literal["sequential", "simultaneous"]


class ConsistencyError(RuntimeError):
    pass


class UnheraldableError(ValueError):
    pass


class PerturbativeWarning(UserWarning):
    pass


class TruncationWarning(UserWarning):
    pass


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class PhysicalParams(_Frozen):
    """Device parameters. Rates are angular frequencies in rad/s."""

    g_o: float = Field(TWO_PI * 800e3, gt=0)
    kappa: float = Field(TWO_PI * 700e6, gt=0)
    gamma_m: float = Field(TWO_PI * 109e3, gt=0)
    omega_m: float = Field(TWO_PI * 5.2e9, gt=0)
    wavelength: float = Field(1550.589e-9, gt=0)
    n_th: float = Field(0.014, ge=0)

    @model_validator(mode="after")
    def _sideband_resolved(self):
        if self.omega_m <= self.kappa:
            warnings.warn(
                f"omega_m={self.omega_m:.3g} <= kappa={self.kappa:.3g}: not sideband resolved",
                stacklevel=2,
            )
        return self

    @property
    def Q_m(self) -> float:
        return self.omega_m / self.gamma_m

    @property
    def omega_a(self) -> float:
        return TWO_PI * 299792458.0 / self.wavelength


class DriveSpec(_Frozen):
    """Intracavity photon numbers of the red and blue tones and the pulse length.

    ``tau`` is the rectangular duration, or the intensity FWHM when
    ``shape='gaussian'``.
    """

    n_r: float = Field(0.0, ge=0)
    n_b: float = Field(0.0, ge=0)
    tau: float = Field(36e-9, ge=0)
    shape: Literal["rectangular", "gaussian"] = "rectangular"

    @property
    def tau_eff(self) -> float:
        if self.shape == "rectangular":
            return self.tau
        # amplitude envelope sqrt(n(t)) has FWHM sqrt(2)*tau; equal-area rectangle
        return self.tau * math.sqrt(math.pi / (2.0 * math.log(2.0)))

    def energy(self) -> float:
        """Intracavity photon number integrated over the pulse, photon*s."""
        return (self.n_r + self.n_b) * self.tau_eff


def coupling_rates(params: PhysicalParams, drive: DriveSpec) -> tuple[float, float]:
    """``(G_r, G_b) = g_o * sqrt(n_{r,b})``."""
    return params.g_o * math.sqrt(drive.n_r), params.g_o * math.sqrt(drive.n_b)


def _red(dims):
    ops = mode_operators(*dims)
    return ops.ad @ ops.m + ops.a @ ops.md


def _blue(dims):
    ops = mode_operators(*dims)
    return ops.ad @ ops.md + ops.a @ ops.m


def build_interaction(params: PhysicalParams, drive: DriveSpec, dims=(5, 5)) -> np.ndarray:
    """``G_r (a^+ m + a m^+) + G_b (a^+ m^+ + a m)`` in rad/s."""
    G_r, G_b = coupling_rates(params, drive)
    H = G_r * _red(dims) + G_b * _blue(dims)
    if not is_hermitian(H, tol=1e-12 * max(1.0, np.abs(H).max())):
        raise ConsistencyError("interaction Hamiltonian is not hermitian")
    return H


def pulse_propagator(
    params: PhysicalParams, drive: DriveSpec, dims=(5, 5), ordering: Ordering = "sequential"
) -> np.ndarray:
    """Unitary of one dual-tone pulse.

    ``simultaneous`` exponentiates the full two-tone Hamiltonian over
    ``tau_eff``. ``sequential`` applies pair creation (blue tone) for
    ``tau_eff`` followed by photon-phonon exchange (red tone) for
    ``tau_eff``; this ordering reproduces the closed-form branch weights
    ``sin^2(2 G_r tau)`` and ``G_b^2 tau^2`` exactly at leading order.
    """
    G_r, G_b = coupling_rates(params, drive)
    t = drive.tau_eff
    if ordering == "simultaneous":
        return expm(-1j * t * build_interaction(params, drive, dims))
    if ordering == "sequential":
        return expm(-1j * G_r * t * _red(dims)) @ expm(-1j * G_b * t * _blue(dims))
    raise ValueError(f"unknown ordering {ordering!r}")


def evolve_pulse(
    psi0: StateVector,
    params: PhysicalParams,
    drive: DriveSpec,
    ordering: Ordering = "sequential",
) -> StateVector:
    if abs(psi0.norm - 1.0) > 1e-10:
        raise ValueError(f"initial state not normalized (norm={psi0.norm})")
    U = pulse_propagator(params, drive, psi0.dims, ordering)
    psi = apply(U, psi0)
    leak = psi.leakage()
    if leak > LEAKAGE_LIMIT:
        warnings.warn(f"truncation leakage {leak:.2e} exceeds {LEAKAGE_LIMIT}", TruncationWarning, stacklevel=2)
        psi = StateVector(psi.dims, psi.amplitudes, flags=("leakage",))
    return psi


@dataclass(frozen=True)
class AmplitudeSet:
    p_r: float
    p_b: float
    A00: complex
    A11: complex
    A20: complex
    A02: complex

    @property
    def p_pre(self) -> float:
        return self.p_b * self.p_r


def branch_probabilities(params: PhysicalParams, drive: DriveSpec) -> tuple[float, float]:
    G_r, G_b = coupling_rates(params, drive)
    t = drive.tau_eff
    return math.sin(2.0 * G_r * t) ** 2, (G_b * t) ** 2


def perturbative_amplitudes(params: PhysicalParams, drive: DriveSpec) -> AmplitudeSet:
    """Leading-order state ``|00> + sqrt(p_b(1-p_r))|11> + sqrt(p_b p_r)|NOON>``."""
    p_r, p_b = branch_probabilities(params, drive)
    if p_b > PERTURBATIVE_LIMIT:
        warnings.warn(f"p_b={p_b:.3f} > {PERTURBATIVE_LIMIT}: expansion unreliable", PerturbativeWarning, stacklevel=2)
    half = math.sqrt(p_b * p_r / 2.0)
    return AmplitudeSet(p_r, p_b, 1.0, math.sqrt(p_b * (1.0 - p_r)), half, half)


def sfwm_term_weight(params: PhysicalParams, drive: DriveSpec, order: int, dims=(5, 5)) -> float:
    """Squared norm of the ``order``-th Taylor term of ``exp(-i H tau)|00>``.

    Order 1 is the two-mode-squeezing term, order 2 the effective
    four-wave-mixing term. Normalized by the norm of the full evolved state.
    """
    if order not in (1, 2):
        raise ValueError(f"unsupported order {order}; expected 1 or 2")
    H = build_interaction(params, drive, dims)
    v = StateVector.vacuum(dims).amplitudes
    t = drive.tau_eff
    term = v
    for k in range(1, order + 1):
        term = (-1j * t / k) * (H @ term)
    total = expm(-1j * t * H) @ v
    return float(np.vdot(term, term).real / np.vdot(total, total).real)


HERALD_PHOTONS = {"zero-photon": 0, "two-photon": 2}


def conditional_state(psi: StateVector, herald: str) -> StateVector:
    """Project the optical factor on ``|0>`` or ``|2>`` and renormalize."""
    if herald not in HERALD_PHOTONS:
        raise ValueError(f"herald must be one of {sorted(HERALD_PHOTONS)}, got {herald!r}")
    n = HERALD_PHOTONS[herald]
    n_a, n_m = psi.dims
    if n >= n_a:
        raise DimensionError(f"optical truncation {n_a} cannot hold {n} photons")
    grid = np.zeros((n_a, n_m), dtype=complex)
    grid[n] = psi.as_grid()[n]
    p = float(np.sum(np.abs(grid) ** 2))
    if p < 1e-12:
        raise UnheraldableError(f"herald probability {p:.3e} below 1e-12")
    return StateVector(psi.dims, grid.reshape(-1) / math.sqrt(p))


def herald_probability(psi: StateVector, herald: str) -> float:
    n = HERALD_PHOTONS[herald]
    return float(np.sum(np.abs(psi.as_grid()[n]) ** 2))


def drive_for(params: PhysicalParams, p_r: float, p_b: float, tau: float) -> DriveSpec:
    """Rectangular drive realizing the requested closed-form branch weights."""
    if not (0 <= p_r <= 1 and p_b >= 0):
        raise ValueError("need 0 <= p_r <= 1 and p_b >= 0")
    G_r = math.asin(math.sqrt(p_r)) / (2.0 * tau)
    G_b = math.sqrt(p_b) / tau
    return DriveSpec(n_r=(G_r / params.g_o) ** 2, n_b=(G_b / params.g_o) ** 2, tau=tau)
