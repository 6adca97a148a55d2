"""HBT detection: photon routing, detector efficiency, dark counts and click records.

Records are kept in columnar form (one array per field) because analyses run
over 10^6-10^8 trials. :class:`ClickRecord` is the per-trial view used for
serialization and inspection.

Text format, one trial per line::

    <trial_index>[;<detector>,<pulse>,<time_ns>]...

Header lines start with ``#`` and carry ``n_trials`` and the pulse windows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .emission import (
    EmissionProfile,
    Statistics,
    heating_times,
    sample_counts,
    uniform_times,
)

DETECTORS = ("A", "B")


class DetectorSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    efficiency: float = Field(0.1, gt=0, le=1)
    # dark counts per detector per pulse window
    dark_rate: float = Field(1e-4, ge=0)
    # fraction of intracavity pump photons reaching the detectors
    filter_rejection: float = Field(1e-6, ge=0, lt=1)
    background_statistics: Statistics = "thermal"
    # merge repeated clicks of one detector within a pulse window
    threshold: bool = False


@dataclass
class Photons:
    """Signal-band photons leaving the filters, one row per photon."""

    n_trials: int
    durations: dict[int, float]
    trial: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    pulse: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))
    time: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return self.trial.size

    def add(self, trial, pulse: int, time) -> None:
        self.trial = np.concatenate([self.trial, np.asarray(trial, np.int64)])
        self.pulse = np.concatenate([self.pulse, np.full(len(trial), pulse, np.int8)])
        self.time = np.concatenate([self.time, np.asarray(time, float)])

    def counts(self, pulse: Optional[int] = None) -> np.ndarray:
        mask = np.ones(self.trial.size, bool) if pulse is None else self.pulse == pulse
        return np.bincount(self.trial[mask], minlength=self.n_trials)


@dataclass(frozen=True)
class ClickRecord:
    trial_index: int
    events: tuple[tuple[str, int, float], ...]

    def to_line(self) -> str:
        parts = [str(self.trial_index)]
        parts += [f"{d},{p},{t * 1e9:.6f}" for d, p, t in self.events]
        return ";".join(parts)

    @classmethod
    def from_line(cls, line: str) -> "ClickRecord":
        head, *rest = line.strip().split(";")
        events = []
        for item in rest:
            d, p, t = item.split(",")
            if d not in DETECTORS:
                raise ValueError(f"unknown detector {d!r} in line {line!r}")
            events.append((d, int(p), float(t) * 1e-9))
        return cls(int(head), tuple(events))


@dataclass
class ClickRecords:
    """All detector clicks of a run, sorted by trial, pulse and time."""

    n_trials: int
    durations: dict[int, float]
    trial: np.ndarray
    detector: np.ndarray
    pulse: np.ndarray
    time: np.ndarray
    # photons reaching the beam splitter per pulse, before detector efficiency
    emitted: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.trial = np.asarray(self.trial, np.int64)
        self.detector = np.asarray(self.detector, np.int8)
        self.pulse = np.asarray(self.pulse, np.int8)
        self.time = np.asarray(self.time, float)
        if not (self.trial.size == self.detector.size == self.pulse.size == self.time.size):
            raise ValueError("column lengths differ")

    @classmethod
    def empty(cls, n_trials: int, durations: dict[int, float]) -> "ClickRecords":
        z = np.zeros(0)
        return cls(n_trials, dict(durations), z, z, z, z)

    def __len__(self) -> int:
        return self.trial.size

    def _sorted(self) -> "ClickRecords":
        order = np.lexsort((self.time, self.pulse, self.trial))
        return ClickRecords(
            self.n_trials, self.durations, self.trial[order], self.detector[order],
            self.pulse[order], self.time[order], dict(self.emitted),
        )

    def mask(self, pulse: Optional[int] = None, detector: Optional[int] = None, window: Optional[float] = None):
        m = np.ones(self.trial.size, bool)
        if pulse is not None:
            m &= self.pulse == pulse
        if detector is not None:
            m &= self.detector == detector
        if window is not None:
            m &= self.time < window
        return m

    def counts(self, pulse: Optional[int] = None, detector: Optional[int] = None, window: Optional[float] = None) -> np.ndarray:
        """Clicks per trial."""
        m = self.mask(pulse, detector, window)
        return np.bincount(self.trial[m], minlength=self.n_trials)

    def __iter__(self) -> Iterator[ClickRecord]:
        starts = np.searchsorted(self.trial, np.arange(self.n_trials + 1))
        for i in range(self.n_trials):
            lo, hi = starts[i], starts[i + 1]
            yield ClickRecord(
                i,
                tuple(
                    (DETECTORS[d], int(p), float(t))
                    for d, p, t in zip(self.detector[lo:hi], self.pulse[lo:hi], self.time[lo:hi])
                ),
            )

    @classmethod
    def from_records(cls, records: Iterable[ClickRecord], n_trials: int, durations) -> "ClickRecords":
        rows = [(r.trial_index, DETECTORS.index(d), p, t) for r in records for d, p, t in r.events]
        if not rows:
            return cls.empty(n_trials, durations)
        tr, de, pu, ti = map(np.array, zip(*rows))
        return cls(n_trials, dict(durations), tr, de, pu, ti)._sorted()

    @classmethod
    def concatenate(cls, parts: list["ClickRecords"]) -> "ClickRecords":
        """Join chunk records; trial indices are offset by the preceding chunks."""
        offset, cols = 0, {k: [] for k in ("trial", "detector", "pulse", "time")}
        emitted: dict[int, int] = {}
        for p in parts:
            for k, v in p.emitted.items():
                emitted[k] = emitted.get(k, 0) + v
            cols["trial"].append(p.trial + offset)
            cols["detector"].append(p.detector)
            cols["pulse"].append(p.pulse)
            cols["time"].append(p.time)
            offset += p.n_trials
        durations = parts[0].durations if parts else {}
        return cls(
            offset, dict(durations), *(np.concatenate(cols[k]) if parts else np.zeros(0) for k in cols), emitted
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            self.write(fh)

    def write(self, fh) -> None:
        fh.write(f"# n_trials={self.n_trials}\n")
        for p, d in sorted(self.durations.items()):
            fh.write(f"# pulse{p}_window_ns={d * 1e9:.6f}\n")
        for p, n in sorted(self.emitted.items()):
            fh.write(f"# pulse{p}_emitted={n}\n")
        for rec in self:
            fh.write(rec.to_line() + "\n")

    @classmethod
    def load(cls, path) -> "ClickRecords":
        with open(path, encoding="utf-8") as fh:
            return cls.read(fh)

    @classmethod
    def read(cls, fh) -> "ClickRecords":
        n_trials, durations, emitted, records, seen = None, {}, {}, [], 0
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key == "n_trials":
                    n_trials = int(value)
                elif key.startswith("pulse") and key.endswith("_window_ns"):
                    durations[int(key[5:-10])] = float(value) * 1e-9
                elif key.startswith("pulse") and key.endswith("_emitted"):
                    emitted[int(key[5:-8])] = int(value)
                continue
            try:
                rec = ClickRecord.from_line(line)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            records.append(rec)
            seen = max(seen, rec.trial_index + 1)
        rec = cls.from_records(records, n_trials if n_trials is not None else seen, durations)
        rec.emitted = emitted
        return rec


def sample_photons(profile: EmissionProfile, rng: np.random.Generator, n_trials: int = 1,
                   statistics: Statistics = "thermal") -> Photons:
    """Independent draws of one pulse's emission, ``n_trials`` times.

    The pair branch gives 0 or 2 photons with probability ``pair/2``; Stokes,
    anti-Stokes and heating backgrounds follow ``statistics``; leakage is
    Poissonian.
    """
    ph = Photons(n_trials, {profile.pulse: profile.duration})
    trials = np.arange(n_trials)
    dur, kap = profile.duration, profile.kappa

    pairs = (rng.random(n_trials) < profile.pair_probability).astype(np.int64) * 2
    bg = sum(sample_counts(getattr(profile, k), statistics, rng, n_trials) for k in ("stokes", "anti_stokes"))
    heat = sample_counts(profile.heating, statistics, rng, n_trials)
    leak = sample_counts(profile.leakage, "poisson", rng, n_trials)

    sig = pairs + bg
    ph.add(np.repeat(trials, sig), profile.pulse, uniform_times(rng, int(sig.sum()), dur, kap))
    ph.add(np.repeat(trials, heat), profile.pulse,
           heating_times(rng, int(heat.sum()), dur, profile.heating_t_s, profile.heating_t_l, kap))
    ph.add(np.repeat(trials, leak), profile.pulse, uniform_times(rng, int(leak.sum()), dur))
    return ph


def hbt_detect(photons: Photons, spec: DetectorSpec, rng: np.random.Generator) -> ClickRecords:
    """Route each photon to A or B with probability 1/2, keep it with the detector efficiency, add darks."""
    n = len(photons)
    det = (rng.random(n) < 0.5).astype(np.int8)
    keep = rng.random(n) < spec.efficiency
    trial, pulse, time, det = photons.trial[keep], photons.pulse[keep], photons.time[keep], det[keep]

    cols = [[trial], [det], [pulse], [time]]
    for p, dur in sorted(photons.durations.items()):
        for d in (0, 1):
            k = rng.poisson(spec.dark_rate, photons.n_trials) if spec.dark_rate > 0 else np.zeros(photons.n_trials, int)
            tot = int(k.sum())
            cols[0].append(np.repeat(np.arange(photons.n_trials), k))
            cols[1].append(np.full(tot, d, np.int8))
            cols[2].append(np.full(tot, p, np.int8))
            cols[3].append(rng.uniform(0.0, dur, tot))
    emitted = {p: int(np.sum(photons.pulse == p)) for p in sorted(photons.durations)}
    rec = ClickRecords(photons.n_trials, dict(photons.durations), *(np.concatenate(c) for c in cols), emitted)._sorted()
    if spec.threshold and len(rec):
        key = np.stack([rec.trial, rec.pulse.astype(np.int64), rec.detector.astype(np.int64)])
        first = np.ones(len(rec), bool)
        # after sorting by (trial, pulse, time) a click is redundant if its
        # (trial, pulse, detector) group already fired earlier
        order = np.lexsort((rec.time, rec.detector, rec.pulse, rec.trial))
        k = key[:, order]
        dup = np.zeros(len(rec), bool)
        dup[1:] = np.all(k[:, 1:] == k[:, :-1], axis=0)
        first[order[dup]] = False
        rec = ClickRecords(rec.n_trials, rec.durations, rec.trial[first], rec.detector[first],
                           rec.pulse[first], rec.time[first], rec.emitted)
    return rec
