"""Exception types shared across the package."""


class OptomechError(Exception):
    """Base class for all package errors."""


class ParameterError(OptomechError, ValueError):
    """A physical parameter lies outside its domain."""


class SingularConfigurationError(OptomechError):
    """The configuration makes a closed-form expression singular."""


class InstabilityError(OptomechError):
    """The linearized dynamics have an eigenvalue with non-negative real part."""

    def __init__(self, margin, message=None):
        self.margin = float(margin)
        super().__init__(message or f"unstable configuration (eigenvalue margin {self.margin:.6g} rad/s)")


class CalibrationError(OptomechError):
    """The calibration tone could not be used to scale the spectrum."""


class FloorModelError(OptomechError):
    """Subtracting the noise floor gave an unphysical thermal variance."""


class SpectrumFormatError(OptomechError, ValueError):
    """A spectrum file does not follow the CSV layout."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConvergenceError(OptomechError):
    """An eigen or root solve did not converge."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)
