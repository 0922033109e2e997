"""Exception types raised across the package."""


class VanError(Exception):
    """Base class for all package errors."""


class FactorizationFailure(VanError, ArithmeticError):
    """A matrix that must be positive definite could not be factorized."""


class DimensionMismatch(VanError, ValueError):
    pass


class CapabilityMissing(VanError, TypeError):
    """The objective does not implement a derivative or engine the caller needs."""


class NonFiniteValue(VanError, FloatingPointError):
    pass


class DegenerateVariance(FactorizationFailure):
    """A variance is zero or below the floor an estimator needs."""


class SafeguardExhausted(VanError, ArithmeticError):
    """Step-size backtracking could not restore positive definiteness."""


class NotPD(VanError, ValueError):
    pass


class NegativeRegularization(VanError, ValueError):
    pass


class BadLabels(VanError, ValueError):
    pass


class EmptySplit(VanError, ValueError):
    pass


class OutOfRange(VanError, ValueError):
    pass


class PoolTooSmall(VanError, ValueError):
    pass


class MaxItersExceeded(VanError, RuntimeError):
    pass


class BadParams(VanError, ValueError):
    pass


class ParseError(VanError, ValueError):
    """Malformed input line in a LIBSVM file."""

    def __init__(self, line: int, column: int, reason: str):
        self.line = line
        self.column = column
        self.reason = reason
        super().__init__(f"line {line}, column {column}: {reason}")


class LabelDomainError(VanError, ValueError):
    pass


class SchemaMismatch(VanError, ValueError):
    pass


class ConfigError(VanError, ValueError):
    pass
