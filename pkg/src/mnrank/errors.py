"""Exception hierarchy shared by every module."""


class MnrankError(Exception):
    """Base class for all errors raised by this package."""


class BoundError(MnrankError, ValueError):
    """A numeric argument lies outside its permitted range."""


class ArgumentError(MnrankError, ValueError):
    pass


class ParseError(MnrankError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(MnrankError, ValueError):
    pass


class MinimalityError(MnrankError, ArithmeticError):
    """The Weierstrass model is not minimal at a prime (or the conductor is wrong)."""

    def __init__(self, message, prime=None):
        self.prime = prime
        super().__init__(message)


class ComputeError(MnrankError, RuntimeError):
    """A point-counting routine failed; ``prime`` names the offending prime."""

    def __init__(self, message, prime=None):
        self.prime = prime
        super().__init__(message)


class DataCorruptionError(MnrankError, ValueError):
    pass


class FormatError(MnrankError, ValueError):
    pass


class ConfigurationError(MnrankError, ValueError):
    pass


class ShapeError(MnrankError, ValueError):
    pass


class NumericError(MnrankError, FloatingPointError):
    pass


class TrainingError(MnrankError, RuntimeError):
    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)


class CheckpointError(MnrankError, ValueError):
    pass


class InputError(MnrankError, ValueError):
    pass
