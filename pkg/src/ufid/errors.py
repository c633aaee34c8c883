"""Exception types shared across the package."""


class UfidError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(UfidError):
    """A domain object violates one of its invariants."""


class ModeMismatchError(UfidError):
    """A query's mode does not match what the operation supports."""


class ShapeMismatchError(UfidError):
    """Two tensors that must share a shape do not."""


class MetricInputError(UfidError):
    """Similarity inputs are unusable (dimension/encoder mismatch, zero vector,
    image smaller than the window, ...)."""


class PhrasePoolError(UfidError):
    """The phrase pool cannot supply the requested augmentation."""


class CalibrationError(UfidError):
    """Threshold calibration received unusable inputs."""


class AssumptionError(UfidError):
    """A statistical check was invoked outside its stated assumption."""


class TransportError(UfidError):
    """A remote call failed at the transport level after all retries.

    Retryable from the caller's perspective; carries the attempt count.
    """

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class ProtocolError(UfidError):
    """A remote peer answered with a payload that violates the wire protocol."""


class BackendStartupError(UfidError):
    """The configured backend is unusable at service startup."""
