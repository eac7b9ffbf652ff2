"""Exception and warning types raised across the package."""


class CVPurifyError(Exception):
    """Base class for all package errors."""


class InvalidArgument(CVPurifyError, ValueError):
    pass


class InvalidState(CVPurifyError, ValueError):
    """Raised when a covariance matrix violates symmetry or the uncertainty relation."""


class UndefinedGain(CVPurifyError, ZeroDivisionError):
    """Raised when a gain is requested for a quadrature with zero input mean."""


class ConfigError(CVPurifyError):
    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class ConsistencyError(CVPurifyError):
    """Analytic and matrix-pipeline results disagree beyond tolerance."""


class NonPhysicalWarning(UserWarning):
    """An inferred quantity fell outside the physically allowed region."""
