"""Exception hierarchy shared across the package."""


class FusezcaError(Exception):
    """Base class for all errors raised by this package."""


class ImageIOError(FusezcaError):
    """Image file is missing or unreadable."""


class FormatError(FusezcaError):
    """Image file exists but cannot be decoded as a supported raster."""


class EmptyImageError(FusezcaError):
    """Image has a zero dimension."""


class DimMismatchError(FusezcaError):
    """Arrays or images that must share a shape do not."""


class NumericalError(FusezcaError):
    """A numerical routine (SVD, eigendecomposition) failed to converge."""


class ConfigError(FusezcaError):
    """Invalid fusion configuration (unknown backbone, bad block id, ...)."""


class ModelLoadError(FusezcaError):
    """Backbone model file missing, unreadable, or structurally invalid."""


class MissingTensorError(ModelLoadError):
    """A declared block output tensor is not present in the model graph."""


class InferenceError(FusezcaError):
    """Backbone forward pass failed at runtime."""


class ShapeError(FusezcaError):
    """Backbone output tensor is not a 4-D single-batch feature map."""


class DegenerateInputError(FusezcaError):
    """Metric input carries no usable signal (e.g. both sources are flat)."""


class TooSmallError(FusezcaError):
    """Image too small for the requested multi-scale computation."""


class PipelineStageError(FusezcaError):
    """A fusion pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"fusion stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
