"""Exception hierarchy shared across the package."""


class WMHSegError(Exception):
    """Base class for all package errors."""


class DataError(WMHSegError, ValueError):
    """Voxel data is unusable (NaN/Inf, wrong dimensionality, bad labels)."""


class AlignmentError(WMHSegError, ValueError):
    """Two grids that must coincide do not."""


class ConfigurationError(WMHSegError, ValueError):
    """A modality, task or config combination cannot be satisfied."""


class ShapeError(WMHSegError, ValueError):
    """Tensor shape or channel layout does not match the model."""


class FusionError(WMHSegError, ValueError):
    """Probability volumes cannot be fused."""


class GenerationError(WMHSegError, RuntimeError):
    """A phantom spec cannot be realized."""


class TrainingError(WMHSegError, RuntimeError):
    """Training diverged or could not proceed."""


class InputError(WMHSegError, ValueError):
    """Inference inputs are missing or unusable."""
