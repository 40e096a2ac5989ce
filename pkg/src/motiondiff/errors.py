"""Typed exceptions shared across the package."""


class InvalidRotationError(ValueError):
    """Input does not describe a valid rotation (non-unit quaternion, etc.)."""


class DegenerateFeatureError(ValueError):
    """Rotation features cannot be projected to a valid rotation.

    Carries the (frame, joint) location of the offending block when known.
    """

    def __init__(self, message, frame=None, joint=None):
        super().__init__(message)
        self.frame = frame
        self.joint = joint


class FormatError(ValueError):
    """Malformed binary file (bad magic, truncated payload, bad header)."""


class FormatVersionError(FormatError):
    """File declares a format version this build does not read."""


class NumericError(RuntimeError):
    """A numeric procedure failed beyond its documented tolerance."""


class NonFiniteLossError(RuntimeError):
    """Training produced a non-finite loss; carries the step and breakdown."""

    def __init__(self, message, step=None, breakdown=None):
        super().__init__(message)
        self.step = step
        self.breakdown = breakdown or {}
