"""Error types shared across the package.

Plain ``ValueError`` is used for invalid arguments. The classes below mark
failure modes that callers (and the command-line layer) treat differently:
``ConfigError`` maps to exit code 2, ``NumericalError`` to 3 and
``DegeneracyError`` to 4.
"""

__all__ = ["ConfigError", "NumericalError", "DegeneracyError"]


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""


class NumericalError(RuntimeError):
    """A numerical routine failed (non-positive-definite factorization,
    overflow in a simulator, every cross-validation candidate broken, ...).

    ``pivot`` carries the offending leading-minor index when the failure
    came from a Cholesky factorization, else ``None``.
    """

    def __init__(self, message: str, *, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class DegeneracyError(RuntimeError):
    """A particle population lost every positive weight and the recovery
    retry failed."""
