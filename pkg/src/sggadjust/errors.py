"""Exception hierarchy shared by every stage of the toolkit."""


class SGGAdjustError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(SGGAdjustError, ValueError):
    pass


class ValidationError(SGGAdjustError, ValueError):
    pass


class FormatError(ValidationError):
    pass


class CoverageError(ValidationError):
    """Raised when a word-vector file lacks vocabulary tokens."""

    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__("word vectors missing for: " + ", ".join(self.missing))


class SplitError(SGGAdjustError, ValueError):
    pass


class ExtractionError(SGGAdjustError, ValueError):
    pass


class IndexLookupError(SGGAdjustError, LookupError):
    pass


class DomainError(SGGAdjustError, ValueError):
    pass


class ShapeError(SGGAdjustError, ValueError):
    pass


class NumericError(SGGAdjustError, ArithmeticError):
    pass


class TrainingError(SGGAdjustError, RuntimeError):
    pass


class UsageError(SGGAdjustError, RuntimeError):
    pass


class ComparisonError(SGGAdjustError, ValueError):
    pass


class StageError(SGGAdjustError, RuntimeError):
    """Pipeline stage failure; wraps the underlying cause."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


class ArtifactError(SGGAdjustError, RuntimeError):
    """Artifact directory conflict: overwrite attempt or mismatched config hash."""


class ArtifactMismatchError(ValidationError):
    """Artifacts produced under different configurations were combined."""
