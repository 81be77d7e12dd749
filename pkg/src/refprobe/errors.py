"""Exception types shared across the package."""


class RefProbeError(Exception):
    """Base class for all package errors."""


class SchemaError(RefProbeError, ValueError):
    """An attribute or value is not part of the active schema."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class BoundsError(RefProbeError, ValueError):
    pass


class GenerationError(RefProbeError, RuntimeError):
    pass


class DatasetError(RefProbeError, ValueError):
    """Malformed dataset record; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ParseError(RefProbeError, ValueError):
    """Logical-form syntax error; ``offset`` is a byte offset into the input."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DimensionError(RefProbeError, ValueError):
    pass


class TrainingError(RefProbeError, RuntimeError):
    def __init__(self, message, step):
        super().__init__(f"step {step}: {message}")
        self.step = step


class CheckpointError(RefProbeError, IOError):
    pass


class SingularityError(RefProbeError, ArithmeticError):
    pass
