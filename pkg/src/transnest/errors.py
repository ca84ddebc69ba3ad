"""Exception types shared across the package."""


class TransNESTError(Exception):
    """Base class for all package errors."""


class ConfigError(TransNESTError, ValueError):
    """Invalid configuration or malformed input document."""


class NumericalError(TransNESTError, ArithmeticError):
    """A numerical routine could not produce a well-defined result."""


class StageError(TransNESTError):
    """Failure inside one named stage of the estimation pipeline."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
