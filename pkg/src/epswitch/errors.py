"""Exception types shared across the package."""


class EpswitchError(Exception):
    """Base class for all package errors."""


class SingularDynamics(EpswitchError):
    """The 8x8 dynamical matrix is numerically singular; no steady state.

    Carries the inhomogeneous drive vector so callers can still report it.
    """

    def __init__(self, message, drive=None):
        super().__init__(message)
        self.drive = drive


class NotHermitian(EpswitchError):
    """Input density matrix is not Hermitian within tolerance."""


class BadTrace(EpswitchError):
    """Input density matrix does not have unit trace within tolerance."""


class ConvergenceFailure(EpswitchError):
    """Dense eigensolver failed to converge."""


class TrackingAmbiguous(EpswitchError):
    """Branch matching along a parameter path could not be disambiguated.

    Raised when adaptive bisection reaches the step-size floor, which
    typically means the path passes through (or too close to) a degeneracy.
    """


class AllStartsFailed(EpswitchError):
    """Every seed of a multi-start search failed to converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class Inconclusive(EpswitchError):
    """Monodromy-based and eigenvector-based order estimates disagree."""


class StepTooLarge(EpswitchError):
    """RK4 step failed the halving convergence guard."""


class NotConjugatePaired(EpswitchError):
    """Expected complex-conjugate eigenvector pairs are absent."""


class DegenerateTop(EpswitchError):
    """Top two eigenvalues of a density matrix coincide; the nearest pure
    state is ambiguous. Both candidate projectors are attached."""

    def __init__(self, message, candidates=None):
        super().__init__(message)
        self.candidates = candidates or []


class ConfigError(EpswitchError):
    """Invalid run configuration (CLI exit code 2)."""


class ComputeError(EpswitchError):
    """A computation dispatched by the CLI failed (CLI exit code 3)."""


class IoError(EpswitchError):
    """Output file could not be written."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
