"""Exception types shared across the package."""


class SkelRefineError(Exception):
    """Base class for all package errors."""


class EncodingError(SkelRefineError):
    """Pose or sequence supplied in the wrong coordinate encoding."""


class InsufficientFramesError(SkelRefineError):
    """Operation needs more frames than the sequence provides."""


class DegenerateGeometryError(SkelRefineError):
    """Point configuration too degenerate for a unique rigid alignment."""


class DimensionError(SkelRefineError):
    """Array shape incompatible with the declared pose or network layout."""


class NumericalError(SkelRefineError):
    """Non-finite values or ill-conditioned arithmetic."""


class TrainingDivergedError(NumericalError):
    """Training loss became non-finite."""

    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"training diverged at iteration {iteration}")


class ConfigurationError(SkelRefineError):
    """Invalid or incomplete configuration."""


class DependencyError(SkelRefineError):
    """A pipeline stage is missing a prerequisite artifact."""


class DataError(SkelRefineError):
    """Malformed or inconsistent file content."""
