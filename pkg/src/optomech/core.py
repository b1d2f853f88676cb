"""Physical parameters and closed-form derived quantities.

Everything inside the package is strict SI with angular frequencies in rad/s.
Conversion from Hz happens only at the configuration boundary.

Detuning convention: ``detuning > 0`` means the drive laser sits below the
cavity resonance (red side), which is the cooling side.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.constants as _sc

from .errors import ParameterError, SingularConfigurationError


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = _sc.hbar
    k_B: float = _sc.k
    c: float = _sc.c
    h: float = field(init=False)

    def __post_init__(self):
        # h is stored as 2*pi*hbar so the two are exactly consistent
        object.__setattr__(self, "h", 2.0 * math.pi * self.hbar)


CONSTANTS = PhysicalConstants()

# finesse may exceed the loss-limited value by this fraction before we warn
FINESSE_TOLERANCE = 0.15


def _check_positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise ParameterError(f"{name} must be finite and > 0, got {value!r}")


def _check_finite(name, value):
    if not np.isfinite(value):
        raise ParameterError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class OpticalCavity:
    """Fabry-Perot cavity with one moving end mirror.

    ``input_transmission`` and ``loss`` are plain fractions (900 ppm -> 9e-4).
    ``detuning_offset`` (rad/s) is added to the drive detuning; it stands in
    for the birefringent splitting between the two polarization modes.
    """

    length: float
    wavelength: float
    finesse: float
    input_transmission: float
    loss: float = 0.0
    detuning_offset: float = 0.0

    def __post_init__(self):
        _check_positive("cavity length", self.length)
        _check_positive("wavelength", self.wavelength)
        _check_positive("finesse", self.finesse)
        if not (0.0 < self.input_transmission < 1.0):
            raise ParameterError(f"input transmission must lie in (0, 1), got {self.input_transmission!r}")
        if not (0.0 <= self.loss < 1.0):
            raise ParameterError(f"intracavity loss must lie in [0, 1), got {self.loss!r}")
        _check_finite("detuning offset", self.detuning_offset)
        limit = 2.0 * math.pi / (self.input_transmission + self.loss)
        if self.finesse > (1.0 + FINESSE_TOLERANCE) * limit:
            warnings.warn(
                f"finesse {self.finesse:g} exceeds the loss-limited value {limit:.4g} "
                f"by more than {FINESSE_TOLERANCE:.0%}",
                stacklevel=3,
            )


@dataclass(frozen=True)
class MechanicalMode:
    omega_m: float
    Q: float
    m_eff: float

    def __post_init__(self):
        _check_positive("mechanical frequency", self.omega_m)
        _check_positive("quality factor", self.Q)
        _check_positive("effective mass", self.m_eff)

    @property
    def gamma_m(self):
        return self.omega_m / self.Q


@dataclass(frozen=True)
class Environment:
    temperature: float

    def __post_init__(self):
        if not (np.isfinite(self.temperature) and self.temperature >= 0):
            raise ParameterError(f"temperature must be finite and >= 0, got {self.temperature!r}")


@dataclass(frozen=True)
class DriveField:
    power: float
    detuning: float
    mode_matching: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.power) and self.power >= 0):
            raise ParameterError(f"drive power must be finite and >= 0, got {self.power!r}")
        _check_finite("detuning", self.detuning)
        if not (0.0 < self.mode_matching <= 1.0):
            raise ParameterError(f"mode matching must lie in (0, 1], got {self.mode_matching!r}")


@dataclass(frozen=True)
class OptomechSystem:
    cavity: OpticalCavity
    mechanics: MechanicalMode
    environment: Environment
    drive: DriveField

    @property
    def detuning(self):
        """Detuning seen by the cooling mode, including the cavity offset."""
        return self.drive.detuning + self.cavity.detuning_offset

    def with_drive(self, **changes):
        """Copy with some drive fields replaced (power, detuning, mode_matching)."""
        values = dict(power=self.drive.power, detuning=self.drive.detuning,
                      mode_matching=self.drive.mode_matching)
        values.update(changes)
        return OptomechSystem(self.cavity, self.mechanics, self.environment, DriveField(**values))


class CavityRates(NamedTuple):
    kappa: float  # amplitude decay rate, rad/s
    kappa_in: float  # input-coupler amplitude decay rate, rad/s
    fsr: float  # Hz
    fwhm: float  # intensity linewidth, Hz


class MechanicalRates(NamedTuple):
    gamma_m: float
    x_zpf: float


class ThermalNumbers(NamedTuple):
    n_th: float
    gamma_th: float  # k_B T / (hbar Q), 1/s


class IntracavityState(NamedTuple):
    n_cav: float
    P_circ: float
    alpha_s: complex


class CouplingRates(NamedTuple):
    g0: float
    G: float
    G_sb: float  # the rate entering Gamma_sb = G_sb^2 / (2 kappa); equal to G in this normalization


class HeatLoad(NamedTuple):
    P_mirror: float
    P_substrate: float


def derive_cavity_rates(cavity: OpticalCavity) -> CavityRates:
    c = CONSTANTS.c
    fsr = c / (2.0 * cavity.length)
    kappa = math.pi * c / (2.0 * cavity.length * cavity.finesse)
    kappa_in = c * cavity.input_transmission / (4.0 * cavity.length)
    return CavityRates(kappa=kappa, kappa_in=kappa_in, fsr=fsr, fwhm=fsr / cavity.finesse)


def derive_mechanical(mode: MechanicalMode) -> MechanicalRates:
    x_zpf = math.sqrt(CONSTANTS.hbar / (2.0 * mode.m_eff * mode.omega_m))
    return MechanicalRates(gamma_m=mode.gamma_m, x_zpf=x_zpf)


def thermal_numbers(env: Environment, mode: MechanicalMode, bose_einstein: bool = False) -> ThermalNumbers:
    """Thermal occupancy and thermal decoherence rate of the bath.

    The default occupancy is the classical ``k_B T / (hbar omega_m)``, which is
    how the experiment converts temperature to quanta. ``bose_einstein=True``
    switches to ``1 / (exp(hbar omega / k_B T) - 1)``.
    """
    kT = CONSTANTS.k_B * env.temperature
    gamma_th = kT / (CONSTANTS.hbar * mode.Q)
    if kT == 0.0:
        return ThermalNumbers(0.0, 0.0)
    x = CONSTANTS.hbar * mode.omega_m / kT
    if bose_einstein:
        n_th = 1.0 / math.expm1(x) if x < 700.0 else 0.0
    else:
        n_th = 1.0 / x
    return ThermalNumbers(n_th=n_th, gamma_th=gamma_th)


def laser_angular_frequency(cavity: OpticalCavity) -> float:
    return 2.0 * math.pi * CONSTANTS.c / cavity.wavelength


def intracavity_state(system: OptomechSystem) -> IntracavityState:
    """Mean intracavity field for a drive through the input coupler.

    Photon flux ``eta P / (hbar omega_L)`` enters at amplitude rate
    ``kappa_in``; circulating power is stored energy times round-trip rate.
    """
    rates = derive_cavity_rates(system.cavity)
    if rates.kappa == 0:
        raise SingularConfigurationError("cavity decay rate is zero")
    omega_L = laser_angular_frequency(system.cavity)
    delta = system.detuning
    flux = system.drive.mode_matching * system.drive.power / (CONSTANTS.hbar * omega_L)
    n_cav = 2.0 * rates.kappa_in * flux / (rates.kappa**2 + delta**2)
    P_circ = n_cav * CONSTANTS.hbar * omega_L * rates.fsr
    alpha_s = math.sqrt(n_cav) * complex(math.cos(math.atan2(delta, rates.kappa)),
                                         math.sin(math.atan2(delta, rates.kappa)))
    return IntracavityState(n_cav=n_cav, P_circ=P_circ, alpha_s=alpha_s)


def coupling_rates(system: OptomechSystem) -> CouplingRates:
    """Single-photon and field-enhanced optomechanical coupling.

    ``G = 2 g0 |alpha_s|`` is the coefficient of the quadrature coupling in the
    drift matrix, with ``x = sqrt(2) x_zpf q``.  With that normalization the
    resolved-sideband damping at ``detuning = omega_m`` is ``G**2 / (2 kappa)``,
    so ``G_sb`` is returned equal to ``G``.
    """
    omega_c = laser_angular_frequency(system.cavity)
    x_zpf = derive_mechanical(system.mechanics).x_zpf
    g0 = omega_c / system.cavity.length * x_zpf
    G = 2.0 * g0 * abs(intracavity_state(system).alpha_s)
    return CouplingRates(g0=g0, G=G, G_sb=G)


# nominal end-mirror reflectivity 99.991 %
END_MIRROR_TRANSMISSION = 9e-5


def heat_load(system: OptomechSystem, mirror_absorption: float, substrate_absorption: float,
              end_mirror_transmission: float = END_MIRROR_TRANSMISSION) -> HeatLoad:
    for name, frac in (("mirror absorption", mirror_absorption),
                       ("substrate absorption", substrate_absorption),
                       ("end-mirror transmission", end_mirror_transmission)):
        if not (0.0 <= frac < 1.0):
            raise ParameterError(f"{name} must lie in [0, 1), got {frac!r}")
    P_circ = intracavity_state(system).P_circ
    return HeatLoad(P_mirror=mirror_absorption * P_circ,
                    P_substrate=substrate_absorption * P_circ * end_mirror_transmission)


def nominal_system(power=7e-3, detuning=None, mode_matching=0.5, temperature=5.3,
                   m_eff=43e-12, Q=30_000.0) -> OptomechSystem:
    """The cryogenic 25 mm cavity and 945 kHz resonator used as the default setup.

    ``detuning`` defaults to the mechanical frequency (optimal cooling point).
    """
    omega_m = 2.0 * math.pi * 945e3
    cavity = OpticalCavity(length=0.025, wavelength=1064e-9, finesse=3900.0,
                           input_transmission=900e-6, loss=620e-6)
    return OptomechSystem(
        cavity=cavity,
        mechanics=MechanicalMode(omega_m=omega_m, Q=Q, m_eff=m_eff),
        environment=Environment(temperature=temperature),
        drive=DriveField(power=power, detuning=omega_m if detuning is None else detuning,
                         mode_matching=mode_matching),
    )
