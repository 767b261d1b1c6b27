"""Exception types raised across the engine."""

from __future__ import annotations


class PTMPOError(Exception):
    """Base class for all engine errors."""


class DimensionError(PTMPOError, ValueError):
    """Operand shapes do not fit together."""


class ValidationError(PTMPOError, ValueError):
    """An input violates a documented precondition (Hermiticity, trace, ...)."""


class UnsupportedConfigurationError(PTMPOError, ValueError):
    """The requested combination of options is not implemented."""


class DegenerateCompressionError(PTMPOError, ArithmeticError):
    """A truncated SVD was asked to compress an all-zero matrix."""

    def __init__(self, message: str, step: int | None = None, mode: int | None = None) -> None:
        self.step = step
        self.mode = mode
        ctx = []
        if mode is not None:
            ctx.append(f"mode {mode}")
        if step is not None:
            ctx.append(f"step {step}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)


class NumericalAbort(PTMPOError, ArithmeticError):
    """Propagation produced non-finite values."""

    def __init__(self, message: str, step: int) -> None:
        self.step = step
        super().__init__(f"{message} at step {step}")
