"""Exception types shared across the package."""


class SectorflowError(Exception):
    """Base class for all package errors."""


class InputError(SectorflowError, ValueError):
    """Malformed or out-of-contract input data."""


class ConfigError(InputError):
    """Invalid configuration (run config, spectral config, generator spec)."""


class InternalError(SectorflowError, RuntimeError):
    """A condition that should be impossible for valid input."""
