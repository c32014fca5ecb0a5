"""Exception types shared across the package."""


class GuwinvError(Exception):
    """Base class for all package-specific errors."""


class NearDefectiveSpectrum(GuwinvError):
    """Eigenvalue cluster too tight for a stable eigenvector basis or derivative."""


class SingularPairing(GuwinvError):
    """A Lyapunov/Sylvester solve hit an eigenvalue pair summing to (almost) zero."""


class SelectionAmbiguity(GuwinvError):
    """An eigenvalue sits too close to the selection boundary of an invariant subspace."""


class SingularSystem(GuwinvError):
    """Linear system matrix is singular to working precision."""


class DegenerateElement(GuwinvError):
    """Element geometry is degenerate (zero length/area or inverted Jacobian)."""


class StarConvexityViolation(GuwinvError):
    """Polygon boundary is not fully visible from the scaling center."""


class ModeNotPropagating(GuwinvError):
    """Requested wave mode does not propagate at the requested frequency."""


class ModeTrackingLoss(GuwinvError):
    """A dispersion branch could not be followed across frequency samples."""


class ModeSelectionAmbiguity(GuwinvError):
    """Decaying/growing mode split is ambiguous (spectrum too close to the split line)."""


class DofMismatch(GuwinvError):
    """Inconsistent degree-of-freedom maps between elements sharing an interface."""


class GeometryInvalid(GuwinvError):
    """Scenario geometry constraints violated (overlaps, ordering, clearances)."""


class InvalidNode(GuwinvError):
    """Mesh node unsuitable for the requested operation."""


class AliasedPulse(GuwinvError):
    """Excitation centre frequency too close to the Nyquist frequency."""


class OverflowGuard(GuwinvError):
    """Exponential time window would overflow for the given grid."""


class NoDistinctMaximum(GuwinvError):
    """Cross-correlation has no sufficiently distinct peak."""


class ConfigError(GuwinvError):
    """Configuration file failed validation."""
