"""Exception hierarchy shared across the package."""


class LLFormerError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(LLFormerError, ValueError):
    """Tensor shapes do not conform for the requested operation."""


class ContractError(LLFormerError, ValueError):
    """A precondition on the inputs of an operation was violated."""


class ConfigError(LLFormerError, ValueError):
    """A configuration object failed validation.

    ``violations`` lists every problem found, not just the first.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NumericError(LLFormerError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)


class ImageFormatError(LLFormerError, ValueError):
    """An image file is not an 8-bit RGB or grayscale PNG."""


class ManifestError(LLFormerError, ValueError):
    """A manifest CSV is malformed; ``problems`` lists every issue found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class CheckpointError(LLFormerError):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    def __init__(self, expected, found):
        self.expected = expected
        self.found = found
        super().__init__(f"unsupported checkpoint version: expected {expected}, found {found}")


class TruncatedCheckpointError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    """Checkpoint payload is inconsistent with its embedded config."""
