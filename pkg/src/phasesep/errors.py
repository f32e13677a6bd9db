"""Exception types shared across the package."""


class PhaseSepError(Exception):
    """Base class for all errors raised by phasesep."""


class DomainError(PhaseSepError, ValueError):
    """A sample lies outside the declared domain of a mapping."""


class SingularCovarianceError(PhaseSepError, ValueError):
    pass


class MalformedFileError(PhaseSepError, ValueError):
    pass


class OutOfBoundsError(PhaseSepError, ValueError):
    """A point lies outside the bin grid (including its margin)."""


class NotPositiveDefiniteError(PhaseSepError, ValueError):
    pass


class NoValidBinsError(PhaseSepError, ValueError):
    def __init__(self, msg="no valid bins"):
        super().__init__(msg)


class ArtifactError(PhaseSepError):
    """Missing, unreadable or version-mismatched pipeline artifact."""


class ConfigError(PhaseSepError, ValueError):
    pass


class NoStencilError(PhaseSepError, ValueError):
    """No valid bin contributes to an interpolation at the requested point."""
