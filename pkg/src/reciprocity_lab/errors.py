"""Exception types raised across the package."""


class ReciprocityLabError(Exception):
    """Base class for all package errors."""


class ConfigError(ReciprocityLabError, ValueError):
    """Invalid or inconsistent configuration."""


class LifecycleError(ReciprocityLabError, RuntimeError):
    """Operation not allowed in the current episode state (e.g. stepping a finished episode)."""


class ArityError(ReciprocityLabError, ValueError):
    """Wrong number of actions, or misaligned sequences."""


class NumericalFault(ReciprocityLabError, FloatingPointError):
    """A network output or gradient became non-finite."""


class CheckpointError(ReciprocityLabError, ValueError):
    """A checkpoint cannot be loaded into the requested network."""


class DataError(ReciprocityLabError, ValueError):
    """Run artifacts required by an analysis are missing or malformed."""
