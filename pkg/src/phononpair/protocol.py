"""Preparation, delay, measurement and pump-probe sequences, and the per-trial sampler.

Timeline of one trial (t = 0 at the start of the preparation pulse)::

    [0, tau_p]                 preparation pulse (both tones), pulse 1
    [tau_p, tau_p + dT]        free evolution, laser-heated reservoir active
    [tau_p + dT, ... + tau_m]  red measurement pulse, pulse 2

Each pulse injects heat at its start. Arrival times inside a pulse are
measured from that pulse's start.

Two fidelities share the same sampler. ``amplitude`` mode propagates the
joint state with the pulse unitary and the delay with population rate
equations. ``master-equation`` mode adds the cavity ring-down of pulse 1
and integrates the delay as a density matrix.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Optional, Protocol, Sequence

import numpy as np
from pydantic import Field, model_validator

from .detection import ClickRecords, DetectorSpec, Photons, hbt_detect, sample_photons
from .dynamics import (
    DriveSpec,
    Ordering,
    PhysicalParams,
    _Frozen,
    _red,
    branch_probabilities,
    pulse_propagator,
)
from .emission import (
    EmissionProfile,
    Statistics,
    decaying_times,
    heating_times,
    rise_integral,
    sample_counts,
    uniform_times,
)
from .fockspace import DensityMatrix, expm, mode_operators, thermal_mechanics, thermal_populations
from .open_system import (
    HeatingModel,
    HeatingSchedule,
    build_collapse,
    heating_profile,
    integrate,
    mechanical_transfer_matrix,
    partial_trace_optical,
    phonon_transfer_matrix,
    stiffness,
)

Mode = Literal["amplitude", "master-equation"]
CHUNK_SIZE = 1 << 17
N_POP = 16
MIN_DELAY_KAPPA = 10.0  # delta_T >= 10 / kappa stands in for delta_T >> 1 / kappa


_trapz = getattr(np, "trapezoid", None) or np.trapz


class ProtocolError(ValueError):
    pass


PREP_DRIVE = DriveSpec(n_r=2.016, n_b=3.665, tau=36e-9)
MEAS_DRIVE = DriveSpec(n_r=2.0, n_b=0.0, tau=47e-9)


class ProtocolSchedule(_Frozen):
    prep: DriveSpec = PREP_DRIVE
    meas: DriveSpec = MEAS_DRIVE
    delta_T: float = Field(30e-9, gt=0)
    # analysis window inside pulse 2; None means the whole pulse
    tau_f: Optional[float] = Field(None, gt=0)
    repetition: float = Field(2e-3, gt=0)
    p_meas: float = Field(0.244, gt=0, lt=1)
    ordering: Ordering = "sequential"

    @model_validator(mode="after")
    def _consistent(self):
        if self.meas.n_b != 0:
            raise ValueError("meas: the measurement pulse carries the red tone only (n_b must be 0)")
        if self.tau_f is not None and self.tau_f > self.meas.tau_eff * (1 + 1e-12):
            raise ValueError(
                f"tau_f: window {self.tau_f:.3e} s exceeds the measurement pulse ({self.meas.tau_eff:.3e} s)"
            )
        if self.repetition <= self.t_meas + self.meas.tau_eff:
            raise ValueError("repetition: period shorter than the pulse sequence")
        return self

    @property
    def t_meas(self) -> float:
        return self.prep.tau_eff + self.delta_T

    @property
    def window(self) -> float:
        return self.meas.tau_eff if self.tau_f is None else self.tau_f

    @property
    def durations(self) -> dict[int, float]:
        return {1: self.prep.tau_eff, 2: self.meas.tau_eff}

    def check(self, params: PhysicalParams) -> None:
        """Enforce ``1/gamma_m > delta_T >> 1/kappa``."""
        if not self.delta_T < 1.0 / params.gamma_m:
            raise ProtocolError(f"delta_T={self.delta_T:.3e} s is not shorter than 1/gamma_m={1 / params.gamma_m:.3e} s")
        if self.delta_T < MIN_DELAY_KAPPA / params.kappa:
            raise ProtocolError(
                f"delta_T={self.delta_T:.3e} s is not much longer than 1/kappa (need >= {MIN_DELAY_KAPPA}/kappa)"
            )

    def with_delay(self, delta_T: float) -> "ProtocolSchedule":
        return self.model_copy(update={"delta_T": delta_T})

    def single_tone(self, tone: Literal["red", "blue"]) -> "ProtocolSchedule":
        """Schedule whose preparation pulse keeps only one tone."""
        drop = "n_b" if tone == "red" else "n_r"
        return self.model_copy(update={"prep": self.prep.model_copy(update={drop: 0.0})})


# -- rates and background means ----------------------------------------------


def scattering_rate(p: float, tau: float) -> float:
    """Constant rate converting a probability over ``tau`` into a per-phonon rate."""
    if p <= 0:
        return 0.0
    return -math.log(max(1.0 - p, 1e-300)) / tau


def pulse_readout_rate(params: PhysicalParams, drive: DriveSpec) -> float:
    """Rate at which a phonon present during the pulse produces a signal photon."""
    p_r, p_b = branch_probabilities(params, drive)
    return scattering_rate(p_r, drive.tau_eff) + p_b / drive.tau_eff if drive.tau_eff > 0 else 0.0


def leakage_mean(params: PhysicalParams, drive: DriveSpec, detector: DetectorSpec) -> float:
    """Pump photons passing the filters during one pulse."""
    return detector.filter_rejection * (drive.n_r + drive.n_b) * params.kappa * drive.tau_eff


def heat_pulses(schedule: ProtocolSchedule, heating: HeatingModel) -> list[tuple[float, float]]:
    return [
        (0.0, heating.n_peak(schedule.prep.energy(), heating.n_peak_prep)),
        (schedule.t_meas, heating.n_peak(schedule.meas.energy(), heating.n_peak_meas)),
    ]


def _heated_excess(heating: HeatingModel, peak: float, dt: float) -> float:
    return float(heating_profile(heating, [(0.0, peak)], dt) - heating.n_base)


def _heating_photons(heating: HeatingModel, peak: float, rate: float, tau: float) -> float:
    if not heating.enabled or peak <= 0:
        return 0.0
    return rate * peak * float(rise_integral(tau, heating.t_s, heating.t_l))


# -- preparation, delay, measurement ---------------------------------------------


@dataclass
class PreparationResult:
    joint: np.ndarray
    mechanics: np.ndarray
    emission: EmissionProfile
    flux_emitted: float = float("nan")
    flux_drop: float = float("nan")

    @property
    def pair_emission_probability(self) -> float:
        return float(self.joint[2, 0])

    @property
    def pair_storage_probability(self) -> float:
        return float(self.joint[0, 2])


def _prepared_density(params, schedule, dims, n_th=None):
    rho0 = thermal_mechanics(dims, params.n_th if n_th is None else n_th).data
    U = pulse_propagator(params, schedule.prep, dims, schedule.ordering)
    return U @ rho0 @ U.conj().T


def _ringdown(rho, params, dims):
    """Empty the cavity through the kappa channel; returns final rho, emitted flux and drop in <n_a>."""
    n_a = dims[0]
    c = build_collapse(params, dims, 0.0, include_cavity=True)
    c = c.with_rates((params.kappa,) + tuple(0.0 for _ in c.rates[1:]))
    t1 = 25.0 / params.kappa
    dt = 1.0 / (25.0 * params.kappa * (n_a - 1))
    traj = integrate(rho, np.zeros_like(rho), c, 0.0, t1, dt)
    na = traj.expect(mode_operators(*dims).num_a).real
    emitted = params.kappa * _trapz(na, traj.times)
    return traj.final, float(emitted), float(na[0] - na[-1])


def run_preparation(
    params: PhysicalParams,
    schedule: ProtocolSchedule,
    heating: Optional[HeatingModel] = None,
    detector: Optional[DetectorSpec] = None,
    mode: Mode = "amplitude",
    dims: tuple[int, int] = (5, 5),
) -> PreparationResult:
    """Pulse 1 from optical vacuum and a thermal mechanical state."""
    schedule.check(params)
    heating = heating or HeatingModel(n_base=params.n_th)
    detector = detector or DetectorSpec()
    rho = _prepared_density(params, schedule, dims)
    joint = DensityMatrix(dims, rho).populations()
    emitted = drop = float("nan")
    if mode == "master-equation":
        rho, emitted, drop = _ringdown(rho, params, dims)
    elif mode != "amplitude":
        raise ValueError(f"unknown mode {mode!r}")
    mech = partial_trace_optical(rho, dims)

    # origin split: vacuum-seeded pairs and single Stokes photons vs thermally seeded excess
    j0 = DensityMatrix(dims, _prepared_density(params, schedule, dims, n_th=0.0)).populations()
    pa0 = j0.sum(axis=1)
    n = np.arange(dims[0])
    mean_total = float(n @ joint.sum(axis=1))
    pair = 2.0 * float(j0[2, 0]) if dims[0] > 2 else 0.0
    stokes = float(n @ pa0) - pair
    peak = heat_pulses(schedule, heating)[0][1]
    prof = EmissionProfile(
        pulse=1,
        duration=schedule.prep.tau_eff,
        pair=pair,
        stokes=max(stokes, 0.0),
        anti_stokes=max(mean_total - float(n @ pa0), 0.0),
        heating=_heating_photons(heating, peak, pulse_readout_rate(params, schedule.prep), schedule.prep.tau_eff),
        leakage=leakage_mean(params, schedule.prep, detector),
        kappa=params.kappa,
        heating_t_s=heating.t_s,
        heating_t_l=heating.t_l,
    )
    return PreparationResult(joint, mech, prof, emitted, drop)


def delay_transfer(
    params: PhysicalParams,
    schedule: ProtocolSchedule,
    heating: HeatingModel,
    mode: Mode = "amplitude",
    n_levels: int = N_POP,
) -> np.ndarray:
    """Phonon-number transfer matrix from the end of pulse 1 to the start of pulse 2."""
    hs = HeatingSchedule(params, heating, heat_pulses(schedule, heating)[:1])
    t0, t1 = schedule.prep.tau_eff, schedule.t_meas
    if mode == "master-equation":
        return mechanical_transfer_matrix(hs, t0, t1, n_levels)
    return phonon_transfer_matrix(hs, t0, t1, n_levels)


def _pad(p: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    k = min(n, p.size)
    out[:k] = p[:k]
    out[k - 1] += p[k:].sum()
    return out


def _add_thermal(p: np.ndarray, mean: float) -> np.ndarray:
    """Distribution of ``n + k`` with ``k`` thermal of the given mean, truncated to ``p.size``."""
    if mean <= 0:
        return p
    q = thermal_populations(mean, 4 * p.size)
    out = np.convolve(p, q)[: p.size].copy()
    out[-1] += 1.0 - out.sum()
    return out


@dataclass
class MeasurementResult:
    phonons: np.ndarray  # phonon-number distribution at the start of pulse 2
    converted: float
    emission: EmissionProfile


def run_delay(
    mech_pop: np.ndarray,
    params: PhysicalParams,
    schedule: ProtocolSchedule,
    heating: HeatingModel,
    mode: Mode = "amplitude",
    n_levels: int = N_POP,
) -> np.ndarray:
    """Phonon-number distribution at the start of pulse 2."""
    peak = heat_pulses(schedule, heating)[0][1]
    p = _add_thermal(_pad(np.asarray(mech_pop, float), n_levels), _heated_excess(heating, peak, schedule.prep.tau_eff))
    return p @ delay_transfer(params, schedule, heating, mode, n_levels)


def convert(phonons: np.ndarray, p_meas: float, mode: Mode = "amplitude") -> float:
    """Mean photon number converted from a phonon-number distribution by the red pulse."""
    phonons = np.asarray(phonons, float)
    if mode == "amplitude":
        return float(p_meas * np.arange(phonons.size) @ phonons)
    # beam-splitter unitary with the optical factor large enough for every phonon
    n = phonons.size
    dims = (n, n)
    theta = math.asin(math.sqrt(p_meas))
    U = expm(-1j * theta * _red(dims))
    rho = np.kron(np.diag(np.eye(n)[0]), np.diag(phonons)).astype(complex)
    rho = U @ rho @ U.conj().T
    return float(np.real(np.trace(rho @ mode_operators(*dims).num_a)))


def run_measurement(
    mech_pop: np.ndarray,
    params: PhysicalParams,
    schedule: ProtocolSchedule,
    heating: HeatingModel,
    detector: Optional[DetectorSpec] = None,
    mode: Mode = "amplitude",
    reference: Optional[np.ndarray] = None,
) -> MeasurementResult:
    """Pulse 2 acting on the phonon distribution ``mech_pop`` reached after the delay.

    ``reference`` is the distribution without pulse-1 pair creation; its
    converted photons are booked as anti-Stokes background.
    """
    schedule.check(params)
    detector = detector or DetectorSpec()
    conv = convert(mech_pop, schedule.p_meas, mode)
    bg = convert(reference, schedule.p_meas, mode) if reference is not None else 0.0
    peak = heat_pulses(schedule, heating)[1][1]
    rate = scattering_rate(schedule.p_meas, schedule.meas.tau_eff)
    prof = EmissionProfile(
        pulse=2,
        duration=schedule.meas.tau_eff,
        pair=max(conv - bg, 0.0),
        anti_stokes=min(bg, conv),
        heating=_heating_photons(heating, peak, rate, schedule.meas.tau_eff),
        leakage=leakage_mean(params, schedule.meas, detector),
        kappa=params.kappa,
        heating_t_s=heating.t_s,
        heating_t_l=heating.t_l,
    )
    return MeasurementResult(np.asarray(mech_pop, float), conv, prof)


# -- pump-probe ----------------------------------------------------------------


@dataclass
class PumpProbeCurve:
    delays: np.ndarray
    response: np.ndarray
    baseline: float
    occupation: np.ndarray


def run_pump_probe(
    params: PhysicalParams,
    heating: HeatingModel,
    delays: Sequence[float],
    pump: DriveSpec = DriveSpec(n_r=0.0, n_b=0.5, tau=20e-9),
    p_meas: float = 0.244,
    dims: tuple[int, int] = (2, 4),
    dt: Optional[float] = None,
    n_peak_pump: Optional[float] = None,
) -> PumpProbeCurve:
    """Probe emission ``p_meas * <n_m>`` after a blue pump, versus pump-probe delay.

    Delays are measured from the end of the pump; the pump's heat enters at
    its start. The mechanics is integrated as a density matrix.
    """
    delays = np.asarray(delays, float)
    if np.any(np.diff(delays) <= 0) or np.any(delays < 0):
        raise ValueError("delays must be nonnegative and increasing")
    # pump pulse on the joint space; the cavity then empties within ~1/kappa
    U = pulse_propagator(params, pump, dims, "sequential")
    rho = U @ thermal_mechanics(dims, heating.n_base).data @ U.conj().T
    mech = partial_trace_optical(rho, dims)
    n_m = dims[1]
    peak = heating.n_peak(pump.energy(), n_peak_pump)
    hs = HeatingSchedule(params, heating, [(0.0, peak)])
    c = hs.collapse((1, n_m), include_cavity=False)
    rates = hs.rates(include_cavity=False)
    num = np.diag(np.arange(n_m)).astype(complex)
    H = np.zeros((n_m, n_m), complex)
    if dt is None:
        stiff = max(stiffness(H, c.with_rates(rates(t))) for t in np.linspace(0, pump.tau_eff + delays[-1], 16))
        dt = min(1.0 / (20.0 * stiff), heating.t_s / 50.0)
    occ, t_prev = [], pump.tau_eff
    for d in delays:
        t = pump.tau_eff + d
        if t > t_prev:
            mech = integrate(mech, H, c, t_prev, t, dt, rates=rates, store_every=10**9, breakpoints=hs.breakpoints).final
        t_prev = t
        occ.append(float(np.real(np.trace(mech @ num))))
    occ = np.array(occ)
    return PumpProbeCurve(delays, p_meas * occ, p_meas * heating.n_base, occ)


# -- per-trial sampler ---------------------------------------------------------


class TrialSource(Protocol):
    durations: dict[int, float]

    def photons(self, n: int, rng: np.random.Generator) -> Photons: ...


def _window_fraction(density_times: np.ndarray, density: np.ndarray, window: float, kappa: float) -> float:
    """Probability that an arrival (density plus Exp(kappa) cavity delay) lands before ``window``."""
    m = density_times <= window
    t, f = density_times[m], density[m]
    if t.size < 2:
        return 0.0
    norm = _trapz(density, density_times)
    g = f * (1.0 - np.exp(-kappa * (window - t))) if np.isfinite(kappa) else f
    return float(_trapz(g, t) / norm)


@dataclass
class SequenceModel:
    """Precomputed tables for sampling the correlated two-pulse sequence."""

    joint: np.ndarray  # pulse-1 joint populations [n_a, n_m]
    heated_at_prep_end: float
    transfer: np.ndarray  # [N_POP, N_POP]
    p_meas: float
    meas_rate: float
    durations: dict[int, float]
    kappa: float
    t_s: float
    t_l: float
    heating_means: tuple[float, float]
    leakage_means: tuple[float, float]
    statistics: Statistics = "thermal"
    detector: DetectorSpec = field(default_factory=DetectorSpec)

    @classmethod
    def build(
        cls,
        params: PhysicalParams,
        schedule: ProtocolSchedule,
        heating: Optional[HeatingModel] = None,
        detector: Optional[DetectorSpec] = None,
        mode: Mode = "amplitude",
        dims: tuple[int, int] = (5, 5),
    ) -> "SequenceModel":
        heating = heating or HeatingModel(n_base=params.n_th)
        detector = detector or DetectorSpec()
        prep = run_preparation(params, schedule, heating, detector, mode, dims)
        meas = run_measurement(np.zeros(2), params, schedule, heating, detector, mode)
        peak1 = heat_pulses(schedule, heating)[0][1]
        return cls(
            joint=prep.joint,
            heated_at_prep_end=_heated_excess(heating, peak1, schedule.prep.tau_eff),
            transfer=delay_transfer(params, schedule, heating, mode, N_POP),
            p_meas=schedule.p_meas,
            meas_rate=scattering_rate(schedule.p_meas, schedule.meas.tau_eff),
            durations=schedule.durations,
            kappa=params.kappa,
            t_s=heating.t_s,
            t_l=heating.t_l,
            heating_means=(prep.emission.heating, meas.emission.heating),
            leakage_means=(prep.emission.leakage, meas.emission.leakage),
            statistics=detector.background_statistics,
            detector=detector,
        )

    # analytic distributions -----------------------------------------------------

    def photon_distribution_1(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    def phonons_at_meas(self) -> np.ndarray:
        p = _add_thermal(_pad(self.joint.sum(axis=0), N_POP), self.heated_at_prep_end)
        return p @ self.transfer

    def pulse_origins(self, pulse: int, window: Optional[float] = None) -> list[tuple[float, float]]:
        """``(mean, second factorial moment)`` of each independent origin inside ``window``."""
        dur = self.durations[pulse]
        w = dur if window is None else window
        t = np.linspace(0.0, dur, 4001)
        full = w >= dur * (1 - 1e-12)

        def frac(dens):
            return 1.0 if full else _window_fraction(t, dens, w, self.kappa)

        heat_dens = (1 - np.exp(-t / self.t_s)) * np.exp(-t / self.t_l)
        f_heat, f_unif = frac(heat_dens), frac(np.ones_like(t))
        f_leak = 1.0 if full else w / dur
        stat2 = 2.0 if self.statistics == "thermal" else 1.0
        out = []
        if pulse == 1:
            pa = self.photon_distribution_1()
            n = np.arange(pa.size)
            out.append((f_unif * float(n @ pa), f_unif**2 * float((n * (n - 1)) @ pa)))
        else:
            pm = self.phonons_at_meas()
            n = np.arange(pm.size)
            q = self.p_meas * frac(np.exp(-self.meas_rate * t))
            out.append((q * float(n @ pm), q**2 * float((n * (n - 1)) @ pm)))
        h = self.heating_means[pulse - 1] * f_heat
        l = self.leakage_means[pulse - 1] * f_leak
        out.append((h, stat2 * h * h))
        out.append((l, l * l))
        return out

    def expected_g2(self, pulse: int, window: Optional[float] = None) -> float:
        """Expected value of the cross-detector counting estimator at delta_N = 0."""
        origins = self.pulse_origins(pulse, window)
        mu = sum(m for m, _ in origins)
        F = sum(f for _, f in origins) + (mu**2 - sum(m * m for m, _ in origins))
        eta, d = self.detector.efficiency, self.detector.dark_rate
        if window is not None:
            d = d * window / self.durations[pulse]
        num = eta**2 / 4 * F + eta * mu * d + d * d
        den = (eta * mu / 2 + d) ** 2
        return num / den if den > 0 else float("nan")

    def mean_photons(self, pulse: int, window: Optional[float] = None) -> float:
        return sum(m for m, _ in self.pulse_origins(pulse, window))

    def _background_pgf(self, pulse: int, x: float) -> float:
        h, l = self.heating_means[pulse - 1], self.leakage_means[pulse - 1]
        g = 1.0 / (1.0 + h * (1.0 - x)) if self.statistics == "thermal" else math.exp(-h * (1.0 - x))
        return g * math.exp(-l * (1.0 - x))

    def _twofold(self, pgf) -> float:
        """P(A >= 1 and B >= 1) for a photon number with generating function ``pgf``."""
        eta, d = self.detector.efficiency, self.detector.dark_rate
        return 1.0 - 2.0 * math.exp(-d) * pgf(1.0 - eta / 2.0) + math.exp(-2.0 * d) * pgf(1.0 - eta)

    def twofold_probabilities(self) -> dict[str, float]:
        """Probabilities of twofold (A and B) click patterns over the two pulses, keyed like the fourfold table.

        Conditioned on the pulse-1 joint outcome the two pulses are
        independent, so the result is a sum over the joint populations.
        """
        J = self.joint / self.joint.sum()
        n_a, n_m = J.shape
        T1 = np.array([self._twofold(lambda x, j=j: x**j * self._background_pgf(1, x)) for j in range(n_a)])
        heated = _add_thermal(_pad(np.array([1.0]), N_POP), self.heated_at_prep_end)
        T2 = np.empty(n_m)
        levels = np.arange(N_POP)
        for k in range(n_m):
            start = np.zeros(N_POP)
            start[np.minimum(k + levels, N_POP - 1)] += heated
            dist = start @ self.transfer
            T2[k] = self._twofold(
                lambda x, dist=dist: float(dist @ (1.0 - self.p_meas + self.p_meas * x) ** levels) * self._background_pgf(2, x)
            )
        p22 = float(T1 @ J @ T2)
        p2x, px2 = float(T1 @ J.sum(axis=1)), float(J.sum(axis=0) @ T2)
        return {"22": p22, "20": p2x - p22, "02": px2 - p22, "00": 1.0 - p2x - px2 + p22}

    # sampling --------------------------------------------------------------

    def photons(self, n: int, rng: np.random.Generator) -> Photons:
        ph = Photons(n, dict(self.durations))
        trials = np.arange(n)
        J = self.joint
        flat = J.reshape(-1) / J.sum()
        idx = rng.choice(flat.size, size=n, p=flat)
        n_a1, n_m1 = np.divmod(idx, J.shape[1])
        dur1, dur2 = self.durations[1], self.durations[2]

        # pulse 1: pulse photons, heating and pump leakage
        ph.add(np.repeat(trials, n_a1), 1, uniform_times(rng, int(n_a1.sum()), dur1, self.kappa))
        self._backgrounds(ph, 1, rng, dur1)

        # storage: add phonons heated during pulse 1, then sample the delay transfer
        n_m = np.minimum(n_m1 + sample_counts(self.heated_at_prep_end, "thermal", rng, n), N_POP - 1)
        cdf = np.cumsum(self.transfer, axis=1)
        cdf[:, -1] = 1.0
        u = rng.random(n)
        n_m2 = (u[:, None] >= cdf[n_m]).sum(axis=1)

        conv = rng.binomial(n_m2, self.p_meas)
        ph.add(np.repeat(trials, conv), 2, decaying_times(rng, int(conv.sum()), dur2, self.meas_rate, self.kappa))
        self._backgrounds(ph, 2, rng, dur2)
        return ph

    def _backgrounds(self, ph: Photons, pulse: int, rng, dur: float) -> None:
        trials = np.arange(ph.n_trials)
        heat = sample_counts(self.heating_means[pulse - 1], self.statistics, rng, ph.n_trials)
        leak = sample_counts(self.leakage_means[pulse - 1], "poisson", rng, ph.n_trials)
        ph.add(np.repeat(trials, heat), pulse, heating_times(rng, int(heat.sum()), dur, self.t_s, self.t_l, self.kappa))
        ph.add(np.repeat(trials, leak), pulse, uniform_times(rng, int(leak.sum()), dur))


@dataclass
class IndependentSource:
    """Pulses drawn independently from fixed emission profiles (a classical control)."""

    profiles: tuple[EmissionProfile, ...]
    statistics: Statistics = "thermal"
    detector: DetectorSpec = field(default_factory=DetectorSpec)

    @property
    def durations(self) -> dict[int, float]:
        return {p.pulse: p.duration for p in self.profiles}

    def photons(self, n: int, rng: np.random.Generator) -> Photons:
        ph = Photons(n, self.durations)
        for prof in self.profiles:
            part = sample_photons(prof, rng, n, self.statistics)
            ph.add(part.trial, prof.pulse, part.time)
        return ph


def chunk_rng(base_seed: int, stream: int, chunk: int) -> np.random.Generator:
    """Generator of one chunk; ``stream`` separates sweep points and reference runs."""
    return np.random.default_rng(np.random.SeedSequence([int(base_seed) % 2**64, stream, chunk]))


def _run_chunk(args) -> ClickRecords:
    source, n, base_seed, stream, chunk = args
    rng = chunk_rng(base_seed, stream, chunk)
    return hbt_detect(source.photons(n, rng), source.detector, rng)


def chunk_sizes(n_trials: int, chunk_size: int = CHUNK_SIZE) -> list[int]:
    full, rest = divmod(n_trials, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def default_workers() -> int:
    env = os.environ.get("PHONONPAIR_WORKERS")
    if env:
        try:
            w = int(env)
        except ValueError:
            w = 0
        if w < 1:
            raise ProtocolError(f"PHONONPAIR_WORKERS must be a positive integer, got {env!r}")
        return w
    return max(1, min(os.cpu_count() or 1, 8))


def simulate_trials(
    source: TrialSource,
    n_trials: int,
    base_seed: int = 0,
    workers: Optional[int] = None,
    chunk_size: int = CHUNK_SIZE,
    stream: int = 0,
) -> ClickRecords:
    """Sample and detect ``n_trials`` independent repetitions.

    Trials are split into fixed-size chunks, each with its own generator
    derived from ``(base_seed, stream, chunk index)``, so the records do not depend
    on the number of workers.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    tasks = [(source, n, base_seed, stream, i) for i, n in enumerate(chunk_sizes(n_trials, chunk_size))]
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(tasks) == 1:
        parts = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            parts = list(pool.map(_run_chunk, tasks))
    return ClickRecords.concatenate(parts)


@dataclass(frozen=True)
class TrialOutcome:
    seed: int
    records: ClickRecords

    def clicks(self, pulse: int) -> int:
        return int(self.records.counts(pulse).sum())


def simulate_trial(source: TrialSource, seed: int) -> TrialOutcome:
    """One repetition of the sequence, reproducible from ``seed``."""
    return TrialOutcome(seed, _run_chunk((source, 1, seed, 0, 0)))
