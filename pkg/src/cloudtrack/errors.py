"""Exception types shared across the package.

Most of these are thin subclasses so callers can catch either the precise
condition or the broad builtin (``ValueError`` / ``RuntimeError``).
"""


class InvalidArgument(ValueError):
    """An argument violates an operation's precondition."""


class PointAtInfinity(ArithmeticError):
    """Projective map sent a point to (or numerically near) the plane at infinity."""


class InsufficientCorrespondences(ValueError):
    """Too few point correspondences, or too few consensus points, for a robust fit."""


class DegenerateHomography(ValueError):
    """Homography cannot be decomposed into a plausible planar pose."""


class DegenerateQuad(ValueError):
    """Quadrilateral has (near-)parallel diagonals; its center is undefined."""


class SessionError(RuntimeError):
    """Client tracking session violated (e.g. frame dimensions changed mid-session)."""


class EmptyPatch(ValueError):
    """A patch produced no descriptors, so it cannot be encoded."""


class PayloadTooLarge(ValueError):
    """Encoded request exceeds the single-datagram limit; caller must downscale."""


class MalformedMessage(ValueError):
    """Datagram bytes do not parse as a known protocol message."""


class CapacityExceeded(ValueError):
    """More objects than a fixed-size result message can carry."""


class InvalidScript(ValueError):
    """Motion script places a reference out of view for the entire sequence."""


class BuildFailed(RuntimeError):
    """Index build produced zero usable references."""


class StartupError(RuntimeError):
    """Server failed to start (e.g. endpoint not bindable)."""
