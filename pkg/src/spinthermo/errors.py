"""Exception hierarchy; the CLI reports ``type(exc).__name__`` as the error class."""


class SpinThermoError(Exception):
    """Base class for all package errors."""


class CalibrationError(SpinThermoError):
    """A pulse could not be calibrated to the required fidelity."""


class FormulaDomainError(SpinThermoError, ValueError):
    """A closed-form expression was evaluated outside its domain."""


class NoOscillationError(SpinThermoError, ValueError):
    """The series is flat; there is no fringe to fit."""


class CalibrationModelError(SpinThermoError, ValueError):
    """Temperature calibration data or model is unusable."""


class OutOfRangeError(SpinThermoError, ValueError):
    """No temperature in the model's validity range matches the frequency."""


class AmbiguousTemperatureError(SpinThermoError, ValueError):
    """Several temperatures in the validity range match the frequency."""

    def __init__(self, message, roots):
        super().__init__(message)
        self.roots = list(roots)


class ConfigError(SpinThermoError, ValueError):
    """Invalid experiment configuration."""
