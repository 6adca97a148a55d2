"""Experiment configuration: validation, TOML I/O and the device preset."""

from __future__ import annotations

import hashlib
import sys
from pathlib import Path
from typing import Literal, Optional, Union

import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .detection import DetectorSpec
from .dynamics import PhysicalParams
from .open_system import HeatingModel
from .protocol import Mode, ProtocolSchedule

SweepAxis = Literal["delta_T", "tau_f", "drive_power", "pump_delay"]
U64 = 2**64
# occupation per unit intracavity energy, photon^-1 s^-1; gives n_peak ~ 0.24 for the preparation pulse
PRESET_HEAT_PER_ENERGY = 1e6


class ConfigError(ValueError):
    """Unreadable or invalid configuration; the message names the location or field."""


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SweepSpec(_Frozen):
    """``delta_T``, ``tau_f`` and ``pump_delay`` values are in seconds; ``drive_power`` scales both preparation tones."""

    axis: SweepAxis
    values: tuple[float, ...] = Field(min_length=1)

    @field_validator("values")
    @classmethod
    def _positive(cls, v):
        if any(x < 0 for x in v):
            raise ValueError("sweep values must be nonnegative")
        return v


class AnalysisSpec(_Frozen):
    delta_N: tuple[int, ...] = (0, 1, 2, 5, 10)
    n_boot: int = Field(1000, ge=0)
    # analysis windows inside pulse 2 used for the windowed decay fit, s
    windows: tuple[float, ...] = (12e-9, 18e-9, 24e-9, 30e-9, 36e-9, 42e-9, 47e-9)
    # single-tone reference runs for the classical bound
    references: bool = True
    thermal_floor: float = 2.0
    # fraction of the run spent on each reference, relative to the main trial count
    reference_fraction: float = Field(1.0, gt=0)
    # detector efficiency for the reference runs; single-tone emission is faint, so a higher
    # efficiency is often needed to resolve its g2 (None keeps the main detector)
    reference_efficiency: Optional[float] = Field(None, gt=0, le=1)


class ExperimentConfig(_Frozen):
    physical: PhysicalParams = PhysicalParams()
    schedule: ProtocolSchedule = ProtocolSchedule()
    detector: DetectorSpec = DetectorSpec()
    heating: HeatingModel = HeatingModel(heat_per_energy=PRESET_HEAT_PER_ENERGY)
    analysis: AnalysisSpec = AnalysisSpec()
    trials: int = Field(10**6, ge=1)
    base_seed: int = Field(0, ge=0, lt=U64)
    mode: Mode = "amplitude"
    dims: tuple[int, int] = (5, 5)
    sweep: Optional[SweepSpec] = None

    @model_validator(mode="before")
    @classmethod
    def _heating_base(cls, data):
        # the heating baseline defaults to the device's thermal occupation
        if isinstance(data, dict):
            heating = data.get("heating", {})
            if isinstance(heating, dict):
                phys = data.get("physical", {})
                n_th = phys.get("n_th") if isinstance(phys, dict) else getattr(phys, "n_th", None)
                base = {"heat_per_energy": PRESET_HEAT_PER_ENERGY, "n_base": 0.014 if n_th is None else n_th}
                data = {**data, "heating": {**base, **heating}}
        return data

    @field_validator("base_seed", mode="before")
    @classmethod
    def _seed(cls, v):
        return int(v) if isinstance(v, str) else v

    @field_validator("dims")
    @classmethod
    def _dims(cls, v):
        if min(v) < 3:
            raise ValueError("dims must be at least (3, 3) to hold two-quantum states")
        return v

    @model_validator(mode="after")
    def _schedule_fits_device(self):
        try:
            self.schedule.check(self.physical)
        except ValueError as exc:
            raise ValueError(f"schedule.delta_T: {exc}") from None
        if self.sweep is not None:
            for v in self.sweep.values:
                try:
                    apply_sweep(self, v)
                except ValueError as exc:
                    raise ValueError(f"sweep.values: {v!r} is invalid ({exc})") from None
        return self

    def to_toml(self) -> str:
        data = self.model_dump(mode="json", exclude_none=True)
        if data["base_seed"] >= 2**63:
            data["base_seed"] = str(data["base_seed"])
        return tomli_w.dumps(data)

    def digest(self) -> str:
        return hashlib.sha256(self.to_toml().encode()).hexdigest()

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_toml(), encoding="utf-8")

    def replace(self, **update) -> "ExperimentConfig":
        """Validated copy with top-level fields replaced."""
        data = self.model_dump()
        data.update(update)
        return ExperimentConfig.model_validate(data)


def apply_sweep(config: ExperimentConfig, value: float):
    """Schedule at one sweep point."""
    axis = config.sweep.axis if config.sweep else None
    s = config.schedule
    if axis == "delta_T":
        s = s.with_delay(value)
        s.check(config.physical)
    elif axis == "tau_f":
        s = ProtocolSchedule.model_validate({**s.model_dump(), "tau_f": value})
    elif axis == "drive_power":
        prep = s.prep.model_copy(update={"n_r": s.prep.n_r * value, "n_b": s.prep.n_b * value})
        s = s.model_copy(update={"prep": prep})
    return s


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse TOML text; missing keys take the preset values."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # tomli reports "(at line L, column C)"
        raise ConfigError(f"{source}: TOML parse error: {exc}") from None
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(x) for x in err["loc"]) or "<root>"
            lines.append(f"{loc}: {err['msg']}")
        raise ConfigError(f"{source}: invalid configuration\n  " + "\n  ".join(lines)) from None


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    return parse_config(text, str(path))


def preset() -> ExperimentConfig:
    """Device values with the default schedule and backgrounds."""
    return ExperimentConfig()
