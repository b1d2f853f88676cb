"""Run configuration: YAML file, schema validation, conversion to model objects.

Every physical key carries its unit as a suffix (``_hz``, ``_w``, ``_m``,
``_kg``...). Frequencies are in Hz here and converted to rad/s when the model
objects are built. Unknown keys are rejected.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .core import DriveField, Environment, MechanicalMode, OpticalCavity, OptomechSystem
from .errors import OptomechError
from .modal import BeamGeometry, Layer, LayerStack, Pad, pad_stiffness_ratio, stack_mass
from .spectral import CalibrationTone

TWO_PI = 2.0 * math.pi


class ConfigError(OptomechError):
    """The configuration file is unreadable or violates the schema."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CavityConfig(_Strict):
    length_m: float = Field(0.025, gt=0)
    wavelength_m: float = Field(1064e-9, gt=0)
    finesse: float = Field(3900.0, gt=0)
    input_coupler_transmission_ppm: float = Field(900.0, gt=0, lt=1e6)
    intracavity_loss_ppm: float = Field(620.0, ge=0, lt=1e6)
    detuning_offset_hz: float = 0.0


class MechanicsConfig(_Strict):
    frequency_hz: float = Field(945e3, gt=0)
    quality_factor: float = Field(30_000.0, gt=0)
    effective_mass_kg: float = Field(43e-12, gt=0)


class EnvironmentConfig(_Strict):
    temperature_k: float = Field(5.3, ge=0)


class DriveConfig(_Strict):
    power_w: float = Field(7e-3, ge=0)
    detuning_hz: float = 945e3
    mode_matching: float = Field(0.6, gt=0, le=1)


class ToneConfig(_Strict):
    frequency_hz: float = Field(gt=0)
    fm_depth_hz: float = Field(gt=0)
    halfwidth_hz: Optional[float] = Field(None, gt=0)


class BudgetConfig(_Strict):
    calibration: float = Field(12.0, ge=0)
    frequency: float = Field(5.0, ge=0)
    power: float = Field(10.0, ge=0)


class AnalysisConfig(_Strict):
    band_hz: Optional[tuple[float, float]] = None
    peak_window_hz: Optional[tuple[float, float]] = None
    floor_m2_per_hz: Optional[float] = Field(None, ge=0)
    budget_percent: BudgetConfig = BudgetConfig()
    combination: Literal["quadrature", "linear"] = "quadrature"
    calibration_tone: Optional[ToneConfig] = None

    @field_validator("band_hz", "peak_window_hz")
    @classmethod
    def _ordered(cls, v):
        if v is not None and not v[0] < v[1]:
            raise ValueError("lower edge must be below upper edge")
        return v


class SynthesisConfig(_Strict):
    start_hz: float = Field(0.0, ge=0)
    bin_hz: float = Field(100.0, gt=0)
    n_bins: int = Field(20001, ge=16)
    center_hz: Optional[float] = Field(None, gt=0)  # grid centred here when given
    floor_m2_per_hz: float = Field(7.3e-34, ge=0)
    averages: float = Field(100.0, gt=0)
    seed: int = Field(0, ge=0)
    unit: Literal["m2_per_hz", "raw"] = "m2_per_hz"
    raw_gain_per_m2: float = Field(1e30, gt=0)  # raw units per m^2 when unit == raw


class ReadoutConfig(_Strict):
    power_w: float = Field(14e-6, gt=0)
    mode_matched_power_w: float = Field(7e-6, gt=0)


class HeatConfig(_Strict):
    mirror_absorption: float = Field(1e-6, ge=0, lt=1)
    substrate_absorption: float = Field(0.01, ge=0, lt=1)
    end_mirror_transmission: float = Field(9e-5, ge=0, lt=1)


class SweepConfig(_Strict):
    detunings_hz: list[float] = Field(default_factory=lambda: [945e3])
    powers_w: list[float] = Field(default_factory=lambda: [140e-6, 1e-3, 7e-3])
    workers: int = Field(1, ge=1)

    @field_validator("detunings_hz", "powers_w")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("list must be non-empty")
        return v


class LayerConfig(_Strict):
    material: str
    thickness_m: float = Field(gt=0)
    density_kg_m3: float = Field(gt=0)
    youngs_modulus_pa: Optional[float] = Field(None, gt=0)
    count: int = Field(1, ge=1)


class StackConfig(_Strict):
    radius_m: float = Field(24.5e-6, ge=0)
    # repeated as a unit: the default is 18 x (Ta2O5, SiO2) = 36 layers
    period: list[LayerConfig] = Field(default_factory=lambda: [
        LayerConfig(material="Ta2O5", thickness_m=126.4e-9, density_kg_m3=8200.0, youngs_modulus_pa=140e9),
        LayerConfig(material="SiO2", thickness_m=179.6e-9, density_kg_m3=2200.0, youngs_modulus_pa=72e9),
    ])
    repeats: int = Field(18, ge=1)


class BeamConfig(_Strict):
    length_m: float = Field(100e-6, gt=0)
    width_m: float = Field(50e-6, gt=0)
    thickness_m: float = Field(1e-6, ge=0)
    density_kg_m3: float = Field(3000.0, gt=0)
    youngs_modulus_pa: float = Field(250e9, gt=0)
    volume_factor: float = Field(1.0, gt=0)


class ProbeConfig(_Strict):
    waist_m: float = Field(8e-6, gt=0)
    center_m: Optional[float] = None  # beam centre by default


class ModalConfig(_Strict):
    beam: BeamConfig = BeamConfig()
    stack: StackConfig = StackConfig()
    probe: ProbeConfig = ProbeConfig()
    pad_stiffening: bool = True
    n_basis: int = Field(24, ge=8)
    spring_constant_n_per_m: float = Field(2196.0, gt=0)
    spring_frequency_hz: float = Field(945e3, gt=0)
    tantala_density_range_kg_m3: tuple[float, float] = (6800.0, 8300.0)


class RunConfig(_Strict):
    cavity: CavityConfig = CavityConfig()
    mechanics: MechanicsConfig = MechanicsConfig()
    environment: EnvironmentConfig = EnvironmentConfig()
    drive: DriveConfig = DriveConfig()
    readout: ReadoutConfig = ReadoutConfig()
    heat: HeatConfig = HeatConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    synthesis: SynthesisConfig = SynthesisConfig()
    sweep: SweepConfig = SweepConfig()
    modal: ModalConfig = ModalConfig()

    @model_validator(mode="after")
    def _grid_positive(self):
        s = self.synthesis
        if s.center_hz is not None and s.center_hz - 0.5 * (s.n_bins - 1) * s.bin_hz <= 0:
            raise ValueError("synthesis grid centred at center_hz reaches non-positive frequencies")
        return self


def _format_errors(exc: ValidationError):
    out = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        out.append(f"{path}: {err['msg']}")
    return out


def parse_config(data) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(["<root>: configuration must be a mapping"])
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path=None) -> RunConfig:
    """Read a YAML config; ``None`` gives the bundled nominal configuration."""
    if path is None:
        text = resources.files("optomech.data").joinpath("nominal.yaml").read_text(encoding="utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError([f"<file>: {exc}"]) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"<yaml>: {exc}"]) from None
    return parse_config(data)


# ---------------------------------------------------------------------------
# conversion


def build_system(cfg: RunConfig) -> OptomechSystem:
    c, m, d = cfg.cavity, cfg.mechanics, cfg.drive
    cavity = OpticalCavity(
        length=c.length_m, wavelength=c.wavelength_m, finesse=c.finesse,
        input_transmission=c.input_coupler_transmission_ppm * 1e-6,
        loss=c.intracavity_loss_ppm * 1e-6,
        detuning_offset=TWO_PI * c.detuning_offset_hz,
    )
    return OptomechSystem(
        cavity=cavity,
        mechanics=MechanicalMode(omega_m=TWO_PI * m.frequency_hz, Q=m.quality_factor, m_eff=m.effective_mass_kg),
        environment=Environment(temperature=cfg.environment.temperature_k),
        drive=DriveField(power=d.power_w, detuning=TWO_PI * d.detuning_hz, mode_matching=d.mode_matching),
    )


def build_tone(cfg: RunConfig) -> CalibrationTone | None:
    t = cfg.analysis.calibration_tone
    if t is None:
        return None
    return CalibrationTone(f_cal=t.frequency_hz, fm_depth=t.fm_depth_hz, cavity_length=cfg.cavity.length_m,
                           optical_frequency=299_792_458.0 / cfg.cavity.wavelength_m, halfwidth=t.halfwidth_hz)


def build_stack(cfg: RunConfig, tantala_density=None) -> LayerStack:
    s = cfg.modal.stack
    period = []
    for lc in s.period:
        density = lc.density_kg_m3
        if tantala_density is not None and lc.material.lower().startswith("ta2o5"):
            density = tantala_density
        period.extend([Layer(lc.material, lc.thickness_m, density, lc.youngs_modulus_pa)] * lc.count)
    return LayerStack(tuple(period * s.repeats), s.radius_m)


def build_beam(cfg: RunConfig, with_pad=True, stiffening=None) -> BeamGeometry:
    b = cfg.modal.beam
    geom = BeamGeometry(length=b.length_m, width=b.width_m, thickness=b.thickness_m, density=b.density_kg_m3,
                        youngs_modulus=b.youngs_modulus_pa, volume_factor=b.volume_factor)
    if not with_pad:
        return geom
    stack = build_stack(cfg)
    stiffening = cfg.modal.pad_stiffening if stiffening is None else stiffening
    ratio = pad_stiffness_ratio(geom, stack) if stiffening else 1.0
    pad = Pad(mass=stack_mass(stack), radius=stack.radius, center=0.5 * b.length_m, stiffness_ratio=ratio)
    return BeamGeometry(length=b.length_m, width=b.width_m, thickness=b.thickness_m, density=b.density_kg_m3,
                        youngs_modulus=b.youngs_modulus_pa, volume_factor=b.volume_factor, pad=pad)
