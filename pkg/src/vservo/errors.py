"""Exception types shared across the package."""


class VservoError(Exception):
    """Base class for all package-specific errors."""


class NonOrthonormalInput(VservoError):
    """Matrix handed to a rotation routine is not orthonormal."""


class DegenerateView(VservoError):
    """Camera cannot produce a valid image of the plane."""


class RejectionExhausted(VservoError):
    """Sample generation ran out of retries for a slot."""


class IoFailure(VservoError):
    """File could not be read or written."""


class FormatVersionMismatch(VservoError):
    """Serialized file has an unknown magic or version."""


class ChecksumMismatch(VservoError):
    """Serialized file failed its integrity check."""


class ShapeMismatch(VservoError):
    """Operands have incompatible shapes."""


class LengthMismatch(VservoError):
    """Sequences that must pair up have different lengths."""


class UnsupportedOp(VservoError):
    """Differentiation requested through an op the engine does not know."""


class EmptyDataset(VservoError):
    """Training requested on a dataset with no samples."""


class EmptyValidation(VservoError):
    """Threshold calibration requested with no validation pairs."""


class DivergenceDetected(VservoError):
    """Training loss became NaN or infinite."""


class IncompatibleBundle(VservoError):
    """Bundle does not provide the models a policy needs."""
