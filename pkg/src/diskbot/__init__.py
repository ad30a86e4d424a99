"""Analysis and simulation toolkit for pendulum-driven rolling disk modules
with magnetic coupling."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import (AlwaysDecoupledError, ConfigError, ContactError, DegenerateModelError,
                     DiskbotError, DivergenceError, DomainError, InvalidParameterError,
                     LiftOffError, SimulationError, UnknownPresetError)
from .linmodel import DEFAULT_GAINS, DEFAULT_PARAMS, ModuleParams, PDGains

__all__ = [
    "__version__",
    "AlwaysDecoupledError", "ConfigError", "ContactError", "DegenerateModelError",
    "DiskbotError", "DivergenceError", "DomainError", "InvalidParameterError",
    "LiftOffError", "SimulationError", "UnknownPresetError",
    "ModuleParams", "PDGains", "DEFAULT_PARAMS", "DEFAULT_GAINS",
]
