"""Laser cooling of a micromechanical resonator in a cryogenic cavity.

Linearized optomechanical model, displacement-spectrum thermometry and the
modal mechanics of a doubly clamped beam carrying a mirror pad.
"""

from .core import (
    CONSTANTS, DriveField, Environment, MechanicalMode, OpticalCavity, OptomechSystem, coupling_rates,
    derive_cavity_rates, derive_mechanical, heat_load, intracavity_state, nominal_system, thermal_numbers,
)
from .dynamics import (
    cooling_predictions, detuning_sweep, drift_diffusion, effective_params, is_stable, nms_warning,
    steady_covariance,
)
from .errors import (
    CalibrationError, ConvergenceError, FloorModelError, InstabilityError, OptomechError, ParameterError,
    SingularConfigurationError, SpectrumFormatError,
)
from .spectral import Spectrum, fit_peak, integrate_band, mode_thermometry, read_spectrum_csv, write_spectrum_csv

__version__ = "0.1.0"
