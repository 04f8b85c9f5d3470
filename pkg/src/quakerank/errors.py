"""Exception hierarchy shared across the package."""


class QuakeRankError(Exception):
    """Base class for all package errors."""


class StorageError(QuakeRankError):
    """Filesystem failure while reading or writing an artifact."""

    def __init__(self, path, reason):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}")


class FormatError(QuakeRankError):
    """A binary or text artifact does not match its declared layout."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    pass


class ManifestError(QuakeRankError):
    """Invalid manifest content (duplicate ids, bad split, bad magnitude)."""


class ConfigError(QuakeRankError, ValueError):
    """A configuration value violates its documented range."""


class DomainError(QuakeRankError, ValueError):
    """Input outside the mathematical domain of an operation."""


class NonFiniteError(QuakeRankError, FloatingPointError):
    """A loss or gradient became NaN or infinite."""


class KinkCollisionError(QuakeRankError):
    """Gradient check kept landing on a non-differentiable point."""
