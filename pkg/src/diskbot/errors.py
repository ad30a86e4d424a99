"""Exception types shared across the package."""


class DiskbotError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(DiskbotError, ValueError):
    pass


class DomainError(DiskbotError, ValueError):
    """Evaluation point outside the domain of a model (e.g. inside a magnet)."""


class UnknownPresetError(DiskbotError, KeyError):
    pass


class AlwaysDecoupledError(DiskbotError):
    """The coupling force never reaches the requested hold force."""


class DegenerateModelError(DiskbotError, ValueError):
    pass


class SimulationError(DiskbotError, RuntimeError):
    """Raised when an integration step cannot continue.

    ``t`` is the simulation time at which the failure was detected.
    """

    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t:.6g} s)")
        self.t = t


class LiftOffError(SimulationError):
    pass


class ContactError(SimulationError):
    pass


class DivergenceError(SimulationError):
    pass


class ConfigError(DiskbotError):
    pass
