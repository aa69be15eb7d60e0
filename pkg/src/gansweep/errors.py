"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so every failure that can
reach a user should be one of them.
"""


class GanSweepError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(GanSweepError, ValueError):
    """Invalid configuration value, unknown option or impossible request."""

    exit_code = 2


class ContractError(GanSweepError, ValueError):
    """A caller violated an operation precondition."""

    exit_code = 2


class ShapeError(ContractError):
    """Tensor shapes are incompatible with the requested operation."""


class IngestionError(GanSweepError):
    """Image data could not be found or decoded."""

    exit_code = 3


class DivergenceError(GanSweepError, FloatingPointError):
    """Training produced a non-finite loss."""

    exit_code = 4
