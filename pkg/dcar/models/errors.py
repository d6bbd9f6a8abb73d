"""
Exception types shared by every stage of the pipeline.
"""


class DcarError(Exception):
    """Base class for all errors raised by the dcar package."""


class ConfigError(DcarError):
    """Invalid configuration value or command-line usage."""


class DataError(DcarError, ValueError):
    """Malformed input: bad file, dimension mismatch, unknown label."""


class NumericalError(DcarError, ArithmeticError):
    """A numerical routine could not produce a valid result."""

    def __init__(self, message, iteration=None, last_good=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_good = last_good
