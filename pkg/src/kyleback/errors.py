"""Exception hierarchy shared across the package.

Every error raised by library code derives from :class:`KyleBackError` so
callers can distinguish domain failures from programming errors.  The CLI
maps these onto process exit codes (validation failures -> 1, runtime
divergence -> 2, usage errors -> 3).
"""


class KyleBackError(Exception):
    """Base class for all library errors."""


class NonPositiveW(KyleBackError):
    """The weighting function w was evaluated at a point where w <= 0."""


class QuadratureFailure(KyleBackError):
    """Adaptive quadrature could not meet its tolerance at max refinement."""


class NotOnto(KyleBackError):
    """A demand-space target lies outside the range of the K_w transform."""


class NotInRange(KyleBackError):
    """A price level lies outside the range of the price map H(t, .)."""


class NotInvertible(KyleBackError):
    """The price map could not be inverted on the probed bracket."""


class BoundaryBreach(KyleBackError):
    """A tracked state left its confinement band after a discrete step."""


class PathDiverged(KyleBackError):
    """A simulated path produced NaN, overflow, or an unrecoverable breach."""


class TooManyDiverged(KyleBackError):
    """More than the allowed fraction of paths were excluded from an estimate."""


class SchemaError(KyleBackError):
    """A config document failed schema validation."""


class UsageError(KyleBackError):
    """Command line arguments were malformed or inconsistent."""
