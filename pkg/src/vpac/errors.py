"""Exception types shared across the package."""


class VpacError(Exception):
    """Base class for all package errors."""


class ConfigError(VpacError):
    """A scenario or parameter violates a validation guard."""


class ResolutionError(VpacError):
    """A grid or tabulation is too coarse for the requested feature size."""


class GeometryError(VpacError):
    """Requested geometry does not fit in the computational box."""


class RangeViolation(VpacError):
    """Field values left the admissible range of the potentials."""


class DegenerateDenominator(VpacError):
    """The multiplier denominator fell below the degeneracy threshold."""

    def __init__(self, denominator: float):
        self.denominator = denominator
        super().__init__(
            f"multiplier denominator {denominator:.3e} below degeneracy threshold"
        )


class VolumeCorrectionError(VpacError):
    """Newton iteration for the scalar volume correction did not converge."""


class NonConvergence(VpacError):
    """An iterative solver exceeded its iteration budget."""

    def __init__(self, message: str, residuals=None):
        self.residuals = residuals
        super().__init__(message)


class RegimeViolation(VpacError):
    """Parameters outside the validated interface-thickness regime."""
