"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions do not agree."""


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


class FormatError(ValueError):
    """Base class for on-disk format problems."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class LabelRangeError(FormatError):
    pass


class InconsistentRecordError(FormatError):
    """Checkpoint records disagree with the stored architecture."""


class DivergenceError(ArithmeticError):
    """Training loss became non-finite."""

    def __init__(self, step, curve=None):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step
        self.curve = list(curve or [])
