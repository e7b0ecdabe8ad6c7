"""Exception types raised across the package."""


class CscnError(Exception):
    """Base class for all package-specific errors."""


class InsufficientBands(CscnError):
    """Derivative spec would consume every band of the cube."""


class InfeasibleSpec(CscnError):
    """Synthetic scene spec cannot be realized on the requested raster."""


class HeaderMismatch(CscnError):
    """Raster payload size disagrees with its sidecar header."""


class UnsupportedDtype(CscnError):
    """Raster header declares a dtype this package does not handle."""


class EmptyClass(CscnError):
    """A declared class has no pixels, so it cannot be split."""


class NoLabeledPixels(CscnError):
    """A loss was asked to average over zero labeled pixels."""


class ChannelMismatch(CscnError):
    """Feature map channel count disagrees with the block config."""


class SpatialMismatch(CscnError):
    """Two feature maps that must share spatial dims do not."""


class TooSmall(CscnError):
    """Feature map is too small to downsample further."""


class EmptyRegion(CscnError):
    """Evaluation region contains no labeled pixels."""


class ShapeMismatch(CscnError):
    """Checkpoint/model shapes disagree with the provided data."""


class DivergenceDetected(CscnError):
    """Training loss became NaN/Inf; the run was aborted.

    Carries the step index and the loss trace recorded up to that point.
    """

    def __init__(self, step: int, message: str = "", trace: tuple = ()):
        self.step = step
        self.trace = tuple(trace)
        super().__init__(message or f"non-finite loss at step {step}")
