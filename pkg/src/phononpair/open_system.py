"""Lindblad integration with cavity decay, mechanical damping and laser heating.

Heating model
-------------
Every optical pulse heats the mode such that, starting from ``n_base``,
its occupation follows exactly

    n(t) = n_base + sum_p n_peak_p (1 - exp(-(t-t_p)/t_s)) exp(-(t-t_p)/t_l)

which is what :func:`heating_profile` returns. Two couplings realize it:

``bath``
    the intrinsic ``gamma_m`` bath carries the time-dependent occupation
    ``n + (dn/dt)/gamma_m``. Stored phonons keep decaying at ``gamma_m``.
    The occupation stays nonnegative when ``gamma_m * t_l >= 1`` (the
    device values give 1.000).
``reservoir``
    the mode also thermalizes with a heated reservoir at rate
    ``gamma_h = 1/t_s + 1/t_l - gamma_m`` whose occupation decays as
    ``exp(-t/t_l)``. Stored phonons then decay at ``gamma_m + gamma_h``.

The closed form doubles as an oracle for the integrator in both cases.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .dynamics import PhysicalParams
from .fockspace import DimensionError, expm, identity, make_annihilation, mode_operators, thermal_populations

TRACE_TOL = 1e-8
POSITIVITY_TOL = 1e-9


class IntegrationAccuracyError(RuntimeError):
    pass


class HeatingModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    enabled: bool = True
    coupling: Literal["bath", "reservoir"] = "bath"
    n_base: float = Field(0.014, ge=0)
    t_s: float = Field(0.22e-6, gt=0)
    t_l: float = Field(1.46e-6, gt=0)
    # occupation added per unit intracavity energy (photon * s)
    heat_per_energy: float = Field(0.0, ge=0)
    n_peak_prep: Optional[float] = Field(None, ge=0)
    n_peak_meas: Optional[float] = Field(None, ge=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.t_s >= self.t_l:
            raise ValueError(f"t_s ({self.t_s}) must be shorter than t_l ({self.t_l})")
        return self

    def n_peak(self, energy: float, override: Optional[float] = None) -> float:
        if not self.enabled:
            return 0.0
        return override if override is not None else self.heat_per_energy * energy

    def coupling_rate(self, gamma_m: float) -> float:
        """Thermalization rate between the mode and the heated reservoir."""
        g = 1.0 / self.t_s + 1.0 / self.t_l - gamma_m
        if g <= 0:
            raise ValueError("gamma_m too large for the heating time constants")
        return g


Pulses = Sequence[tuple[float, float]]


def heating_profile(model: HeatingModel, pulses: Pulses, t) -> np.ndarray:
    """Mode occupation ``n_bath(t)`` for a time-ordered pulse history ``[(t_p, n_peak)]``."""
    t = np.asarray(t, dtype=float)
    n = np.full_like(t, model.n_base)
    if not model.enabled:
        return n
    times = [tp for tp, _ in pulses]
    if times != sorted(times):
        raise ValueError("pulse history must be time-ordered")
    for tp, peak in pulses:
        dt = t - tp
        after = dt > 0
        x = np.where(after, dt, 0.0)
        n = n + np.where(after, peak * (1.0 - np.exp(-x / model.t_s)) * np.exp(-x / model.t_l), 0.0)
    return n


def profile_peak_time(model: HeatingModel) -> float:
    """Delay after a pulse at which the heating profile peaks."""
    return model.t_s * math.log(1.0 + model.t_l / model.t_s)


def bath_occupation(model: HeatingModel, gamma_m: float, pulses: Pulses, t) -> np.ndarray:
    """Occupation of the ``gamma_m`` bath that drives the mode along :func:`heating_profile`."""
    t = np.asarray(t, dtype=float)
    n = np.full_like(t, model.n_base)
    if not model.enabled:
        return n
    for tp, peak in pulses:
        x = np.clip(t - tp, 0.0, None)
        rise, fall = -np.expm1(-x / model.t_s), np.exp(-x / model.t_l)
        slope = (1.0 - rise) * fall / model.t_s - rise * fall / model.t_l
        n = n + np.where(t - tp >= 0, peak * (rise * fall + slope / gamma_m), 0.0)
    return np.clip(n, 0.0, None)


def reservoir_occupation(model: HeatingModel, gamma_m: float, pulses: Pulses, t) -> np.ndarray:
    """Occupation of the laser-heated reservoir driving the mode."""
    t = np.asarray(t, dtype=float)
    n = np.full_like(t, model.n_base)
    if not model.enabled:
        return n
    scale = 1.0 / (model.coupling_rate(gamma_m) * model.t_s)
    for tp, peak in pulses:
        dt = t - tp
        n = n + np.where(dt >= 0, peak * scale * np.exp(-np.clip(dt, 0, None) / model.t_l), 0.0)
    return n


@dataclass(frozen=True)
class CollapseSet:
    """Jump operators ``L_k`` with rates; the dissipator uses ``rate_k * D[L_k]``."""

    operators: tuple[np.ndarray, ...]
    rates: tuple[float, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.operators) != len(self.rates):
            raise ValueError("operators and rates differ in length")
        if any(r < 0 for r in self.rates):
            raise ValueError(f"negative collapse rate in {self.rates}")
        dims = {op.shape for op in self.operators}
        if len(dims) > 1:
            raise DimensionError(f"inconsistent collapse operator shapes {dims}")

    def with_rates(self, rates) -> "CollapseSet":
        return CollapseSet(self.operators, tuple(float(r) for r in rates), self.names)


def _ladders(dims):
    """Cavity and mechanical annihilators for ``(n_a, n_m)``; ``n_a == 1`` means mechanics only."""
    n_a, n_m = dims
    if n_a == 1:
        return None, make_annihilation(n_m)
    ops = mode_operators(n_a, n_m)
    return ops.a, ops.m


def mechanical_rates(params: PhysicalParams, n_bath: float, gamma_h: float = 0.0, n_hot: float = 0.0):
    """Rates of (m, m^+) for intrinsic damping plus reservoir thermalization."""
    down = params.gamma_m * (1.0 + n_bath) + gamma_h * (1.0 + n_hot)
    up = params.gamma_m * n_bath + gamma_h * n_hot
    return down, up


def build_collapse(
    params: PhysicalParams,
    dims,
    n_bath: float,
    include_cavity: bool = True,
    gamma_h: float = 0.0,
    n_hot: float = 0.0,
) -> CollapseSet:
    """Cavity decay ``sqrt(kappa) a``, mechanical decay and heating channels.

    Intrinsic and reservoir channels share the operators ``m`` and ``m^+`` so
    they are merged into one rate each.
    """
    a, m = _ladders(dims)
    down, up = mechanical_rates(params, n_bath, gamma_h, n_hot)
    ops, rates, names = [m, m.conj().T], [down, up], ["mech_decay", "mech_heating"]
    if include_cavity:
        if a is None:
            raise DimensionError("cavity channel needs an optical mode")
        ops.insert(0, a)
        rates.insert(0, params.kappa)
        names.insert(0, "cavity_decay")
    return CollapseSet(tuple(ops), tuple(rates), tuple(names))


def lindblad_rhs(rho, H, c: CollapseSet) -> np.ndarray:
    """GKSL generator ``-i[H, rho] + sum_k r_k (L rho L^+ - {L^+ L, rho}/2)``."""
    rho = np.asarray(rho)
    H = np.asarray(H)
    if rho.shape != H.shape or (c.operators and c.operators[0].shape != rho.shape):
        raise DimensionError(f"shape mismatch rho {rho.shape}, H {H.shape}")
    H_eff = H.astype(complex)
    for L, r in zip(c.operators, c.rates):
        H_eff = H_eff - 0.5j * r * (L.conj().T @ L)
    out = -1j * (H_eff @ rho - rho @ H_eff.conj().T)
    for L, r in zip(c.operators, c.rates):
        if r:
            out = out + r * (L @ rho @ L.conj().T)
    return out


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    trace_drift: float
    min_eigenvalue: float
    steps: int

    def expect(self, op) -> np.ndarray:
        return np.einsum("tij,ji->t", self.states, op)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def stiffness(H, c: CollapseSet) -> float:
    """Largest rate scale of the generator, used to bound the step size."""
    h = float(np.linalg.norm(H, 2)) if np.any(H) else 0.0
    d = sum(r * float(np.linalg.norm(L, 2)) ** 2 for L, r in zip(c.operators, c.rates))
    return max(h, d)


def _memo(fn):
    """Cache the last evaluation; RK4 evaluates each midpoint twice."""
    last = [None, None]

    def g(t):
        if last[0] != t:
            last[0], last[1] = t, fn(t)
        return last[1]

    return g


def integrate(
    rho0,
    hamiltonian,
    collapse: CollapseSet,
    t0: float,
    t1: float,
    dt: float,
    rates: Optional[Callable[[float], Sequence[float]]] = None,
    store_every: int = 1,
    check_step: bool = True,
    breakpoints: Sequence[float] = (),
) -> Trajectory:
    """Fixed-step RK4 integration of the master equation from ``t0`` to ``t1``.

    ``hamiltonian`` is a matrix or a callable ``t -> matrix``; ``rates`` an
    optional callable ``t -> rates`` overriding ``collapse.rates``. Steps are
    aligned to ``breakpoints`` (discontinuities of the schedule) and shortened
    uniformly within each segment so that at most ``dt`` is used.
    """
    rho = np.array(rho0, dtype=complex)
    if t1 < t0:
        raise ValueError("t1 < t0")
    edges = [t0] + sorted(b for b in set(breakpoints) if t0 < b < t1) + [t1]
    grid = [np.array([t0])]
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi > lo:
            k = max(1, math.ceil((hi - lo) / dt - 1e-9))
            grid.append(lo + (hi - lo) * np.arange(1, k + 1) / k)
    grid = np.concatenate(grid)
    n_steps = len(grid) - 1
    H_of = hamiltonian if callable(hamiltonian) else (lambda t, _H=np.asarray(hamiltonian): _H)
    c_of = (lambda t: collapse.with_rates(rates(t))) if rates is not None else (lambda t: collapse)

    if check_step and n_steps:
        for probe in (t0, 0.5 * (t0 + t1), t1):
            s = stiffness(H_of(probe), c_of(probe))
            if s * dt > 1.0 / 20.0 + 1e-12:
                raise ValueError(f"dt={dt:.3e} exceeds 1/(20*{s:.3e}); reduce the step")

    # operator products are fixed; only the Hamiltonian and the rates depend on t
    Ls = [np.asarray(L, complex) for L in collapse.operators]
    Lds = [L.conj().T for L in Ls]
    LdLs = [Ld @ L for L, Ld in zip(Ls, Lds)]
    rate_of = (lambda t: collapse.rates) if rates is None else _memo(rates)

    def f(t, r):
        rs = rate_of(t)
        H_eff = np.asarray(H_of(t), complex)
        for LdL, k in zip(LdLs, rs):
            H_eff = H_eff - (0.5j * k) * LdL
        out = -1j * (H_eff @ r - r @ H_eff.conj().T)
        for L, Ld, k in zip(Ls, Lds, rs):
            if k:
                out = out + k * (L @ r @ Ld)
        return out

    tr0 = np.trace(rho).real
    times, states = [t0], [rho.copy()]
    for i in range(1, n_steps + 1):
        t, h = grid[i - 1], grid[i] - grid[i - 1]
        k1 = f(t, rho)
        k2 = f(t + h / 2, rho + (h / 2) * k1)
        k3 = f(t + h / 2, rho + (h / 2) * k2)
        # right-hand stage evaluated just inside the segment
        k4 = f(t + h * (1 - 1e-12), rho + h * k3)
        rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = grid[i]
        if i % store_every == 0 or i == n_steps:
            times.append(t)
            states.append(rho.copy())
    states = np.array(states)
    herm = 0.5 * (states + np.conj(np.swapaxes(states, 1, 2)))
    min_eig = float(np.linalg.eigvalsh(herm)[:, 0].min())
    drift = float(np.max(np.abs(np.trace(states, axis1=1, axis2=2).real - tr0)))
    if min_eig < -POSITIVITY_TOL:
        raise IntegrationAccuracyError(
            f"minimum eigenvalue {min_eig:.3e} below -{POSITIVITY_TOL}; use a smaller dt"
        )
    return Trajectory(np.array(times), states, drift, min_eig, n_steps)


class HeatingSchedule:
    """Time-dependent mechanical rates for a pulse history."""

    def __init__(self, params: PhysicalParams, model: HeatingModel, pulses: Pulses = ()):
        self.params = params
        self.model = model
        self.pulses = tuple(pulses)
        self.reservoir = model.enabled and model.coupling == "reservoir"
        self.gamma_h = model.coupling_rate(params.gamma_m) if self.reservoir else 0.0
        if model.enabled and not self.reservoir and params.gamma_m * model.t_l < 1.0 - 1e-3:
            # the bath occupation would need to go negative in the tail; it is clipped at zero
            warnings.warn(
                f"gamma_m * t_l = {params.gamma_m * model.t_l:.3f} < 1: bath coupling cannot follow "
                "the heating profile tail; consider coupling='reservoir'",
                stacklevel=2,
            )

    def n_hot(self, t) -> float:
        return float(reservoir_occupation(self.model, self.params.gamma_m, self.pulses, t))

    def n_bath(self, t) -> float:
        m = self.model
        if self.reservoir or not m.enabled:
            return m.n_base
        # scalar form of bath_occupation, evaluated at every integrator stage
        n = m.n_base
        for tp, peak in self.pulses:
            x = t - tp
            if x >= 0:
                rise, fall = -math.expm1(-x / m.t_s), math.exp(-x / m.t_l)
                slope = (1.0 - rise) * fall / m.t_s - rise * fall / m.t_l
                n += peak * (rise * fall + slope / self.params.gamma_m)
        return max(n, 0.0)

    def mechanical_rates(self, t) -> tuple[float, float]:
        n_hot = self.n_hot(t) if self.reservoir else 0.0
        return mechanical_rates(self.params, self.n_bath(t), self.gamma_h, n_hot)

    def collapse(self, dims, include_cavity=True) -> CollapseSet:
        down, up = self.mechanical_rates(0.0)
        c = build_collapse(self.params, dims, 0.0, include_cavity)
        return c.with_rates(c.rates[:-2] + (down, up))

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(tp for tp, _ in self.pulses)

    def rates(self, include_cavity=True) -> Callable[[float], tuple]:
        kappa = self.params.kappa

        def fn(t):
            down, up = self.mechanical_rates(t)
            return (kappa, down, up) if include_cavity else (down, up)

        return fn

    def max_rate(self, t0: float, t1: float) -> float:
        ts = np.linspace(t0, t1, 64)
        return max(sum(self.mechanical_rates(t)) for t in ts)


def population_generator(down: float, up: float, n_levels: int) -> np.ndarray:
    """Rate matrix ``W`` with ``dP/dt = P @ W`` for a damped, truncated oscillator."""
    n = np.arange(n_levels, dtype=float)
    W = np.zeros((n_levels, n_levels))
    W[n.astype(int)[1:], n.astype(int)[:-1]] = down * n[1:]
    W[n.astype(int)[:-1], n.astype(int)[1:]] = up * (n[:-1] + 1)
    W[np.arange(n_levels), np.arange(n_levels)] = -W.sum(axis=1)
    return W


def phonon_transfer_matrix(
    schedule: HeatingSchedule, t0: float, t1: float, n_levels: int, substeps: int = 200
) -> np.ndarray:
    """``T[i, j] = P(n(t1) = j | n(t0) = i)`` from the population rate equations."""
    T = np.eye(n_levels)
    if t1 <= t0:
        return T
    edges = np.linspace(t0, t1, substeps + 1)
    for lo, hi in zip(edges[:-1], edges[1:]):
        down, up = schedule.mechanical_rates(0.5 * (lo + hi))
        T = T @ expm(population_generator(down, up, n_levels) * (hi - lo)).real
    return np.clip(T, 0.0, None) / np.clip(T, 0.0, None).sum(axis=1, keepdims=True)


def mechanical_transfer_matrix(
    schedule: HeatingSchedule, t0: float, t1: float, n_levels: int, dt: Optional[float] = None
) -> np.ndarray:
    """Same transfer matrix as :func:`phonon_transfer_matrix`, from full density-matrix integration."""
    T = np.eye(n_levels)
    if t1 <= t0:
        return T
    c = schedule.collapse((1, n_levels), include_cavity=False)
    rates_fn = schedule.rates(include_cavity=False)
    stiff = max(
        stiffness(np.zeros((n_levels, n_levels)), c.with_rates(rates_fn(t)))
        for t in np.linspace(t0, t1, 32)
    )
    step = dt if dt is not None else min(1.0 / (20.0 * stiff), schedule.model.t_s / 50.0)
    H = np.zeros((n_levels, n_levels), dtype=complex)
    for i in range(n_levels):
        rho = np.zeros((n_levels, n_levels), dtype=complex)
        rho[i, i] = 1.0
        traj = integrate(rho, H, c, t0, t1, step, rates=rates_fn, store_every=10**9, breakpoints=schedule.breakpoints)
        T[i] = np.real(np.diag(traj.final))
    return T


def thermal_density(n_mean: float, n_levels: int) -> np.ndarray:
    return np.diag(thermal_populations(n_mean, n_levels)).astype(complex)


def partial_trace_optical(rho, dims) -> np.ndarray:
    n_a, n_m = dims
    return np.einsum("ikil->kl", np.asarray(rho).reshape(n_a, n_m, n_a, n_m))


def embed_mechanical(rho_m, n_a: int) -> np.ndarray:
    vac = np.zeros((n_a, n_a))
    vac[0, 0] = 1.0
    return np.kron(vac, rho_m)


def mechanical_identity(n_m: int) -> np.ndarray:
    return identity(n_m)
