"""Exception types shared across the package."""


class MakeupLabError(Exception):
    """Base class for all package errors."""


class InputDomainError(MakeupLabError, ValueError):
    """An input value is outside its documented domain."""


class SchemaError(MakeupLabError, ValueError):
    """A landmark set does not match its declared schema."""


class EmptyRegionError(MakeupLabError, ValueError):
    """A region mask (or mask complement) selects no pixels."""


class SpecError(MakeupLabError, ValueError):
    """A crop spec or architecture spec violates its invariants."""


class ShapeError(MakeupLabError, ValueError):
    """Tensor shape incompatible with the requested operation."""


class ScaleError(MakeupLabError, ValueError):
    """Image too small for the requested number of similarity scales."""


class CheckpointError(MakeupLabError, RuntimeError):
    """Checkpoint file is corrupt, truncated, or incompatible."""


class ConfigurationError(MakeupLabError, ValueError):
    """Invalid run configuration (empty pools, bad catalogs, ...)."""


class ManifestError(MakeupLabError, ValueError):
    """Dataset or triplet manifest is inconsistent."""


class DatasetQualityError(MakeupLabError, RuntimeError):
    """Too many samples failed weak-label extraction."""


class TrainingDivergedError(MakeupLabError, RuntimeError):
    """A loss became non-finite during training."""

    def __init__(self, message: str, record: dict | None = None):
        super().__init__(message)
        self.record = record or {}


class DecodeError(MakeupLabError, ValueError):
    """An image payload could not be decoded."""
