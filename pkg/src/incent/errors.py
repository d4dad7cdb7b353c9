"""Exception types shared across the toolkit.

Two families matter to callers.  ValidationError covers malformed inputs:
bad schemas, impossible parameters, incoherent configuration.  NumericalError
covers well-formed inputs on which a computation cannot proceed: singular
matrices, missing roots, broken accounting.  The command-line layer maps the
first family to exit code 1 and the second to exit code 2.
"""


class ToolkitError(Exception):
    """Base class for every error this package raises deliberately."""


class ValidationError(ToolkitError):
    """Inputs are malformed or internally inconsistent."""


class NumericalError(ToolkitError):
    """Inputs are well-formed but the computation cannot proceed."""


# -- market equilibrium ------------------------------------------------------

class InvalidPrimitives(ValidationError):
    """Market primitives violate the curve requirements (e.g. flat demand)."""


class NoEquilibrium(NumericalError):
    """No positive-quantity solution exists for the configured market."""


class DegenerateSubsidy(ValidationError):
    """A pass-through rate was requested for a non-positive subsidy."""


class NotPaired(ValidationError):
    """A cancellation check was requested for a non-paired intervention."""


# -- regression designs ------------------------------------------------------

class RankDeficient(NumericalError):
    """A design column is (numerically) a linear combination of the others."""


class InsufficientData(ValidationError):
    """Too few rows for the requested fit or summary."""


class DegenerateCorrelation(NumericalError):
    """A coefficient covariance was requested for perfectly correlated regressors."""


class IncompleteTable(ValidationError):
    """A path decomposition needs a coefficient the supplied table lacks."""


# -- matching ----------------------------------------------------------------

class SingularCovariance(NumericalError):
    """The pooled covariate covariance is not invertible."""


class NoControls(ValidationError):
    """A treated observation has no eligible control to match against."""


# -- data ingestion ----------------------------------------------------------

class MissingBoundary(ValidationError):
    """Geographic fallback is needed but no boundary polygon was supplied."""


class AccountingMismatch(NumericalError):
    """Entry/exit accounting does not reconcile beyond rounding."""


class InsufficientHistory(ValidationError):
    """Lagging or differencing would leave an empty estimation sample."""


class SchemaError(ValidationError):
    """An input file does not match its documented schema."""


# -- command line ------------------------------------------------------------

class ConfigError(ValidationError):
    """The configuration file or flag set is invalid."""
