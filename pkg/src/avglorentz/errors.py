"""Exception types shared across the package."""


class AvgLorentzError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(AvgLorentzError):
    """Bad scenario configuration (unknown keys, invalid values)."""


class DomainError(AvgLorentzError):
    """An argument lies outside the mathematical domain of an operation."""


class NonTimelikeError(DomainError):
    """A vector that must be timelike is not; carries the offending norm."""

    def __init__(self, norm, message=None):
        self.norm = norm
        super().__init__(message or f"vector is not timelike: eta(y,y) = {norm!r}")


class DegenerateMomentsError(AvgLorentzError):
    """Moment computation over an empty (or weightless) particle selection."""


class OutOfDomainError(AvgLorentzError):
    """A flow or interpolation query left the configured domain."""


class IntegrationAbort(AvgLorentzError):
    """Integration stopped early; carries the offending step index."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"integration aborted at step {step}")
