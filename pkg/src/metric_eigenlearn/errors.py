"""Exception and warning types raised across the package."""


class MetricLearnError(Exception):
    """Base class for all package errors."""


class ZeroMarginal(MetricLearnError, ValueError):
    """A row or column of the data matrix sums to zero."""


class EmptyAfterDedup(MetricLearnError, ValueError):
    """Deduplication left fewer than two rows or columns."""


class DimensionMismatch(MetricLearnError, ValueError):
    pass


class NotSymmetric(MetricLearnError, ValueError):
    pass


class Infeasible(MetricLearnError):
    """Transport marginals are inconsistent."""


class NonConvergence(MetricLearnError):
    """An inner iterative routine hit its iteration cap.

    ``residual`` carries the last observed violation so callers can decide
    whether the partial result is usable.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NegativeQuadraticForm(MetricLearnError, ValueError):
    """(x - y)^T A (x - y) is clearly negative, so A is not PSD."""


class NegativeWeight(NegativeQuadraticForm):
    """A graph weight computed from a squared Mahalanobis form is negative."""


class NotGeneric(MetricLearnError, ValueError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class LaplacianNeedsPositiveReference(MetricLearnError, ValueError):
    """The Laplacian kernel needs q > 0, i.e. a reference with lambda_min > 0."""


class ZeroNorm(MetricLearnError, ArithmeticError):
    """A map returned the zero matrix inside a normalized iteration."""


class ClassViolation(MetricLearnError):
    def __init__(self, message, verdict=None):
        super().__init__(message)
        self.verdict = verdict


class SingleClass(MetricLearnError, ValueError):
    pass


class ParseError(MetricLearnError, ValueError):
    def __init__(self, message, row=None, column=None, token=None):
        super().__init__(message)
        self.row = row
        self.column = column
        self.token = token


class NegativeEntries(MetricLearnError, ValueError):
    pass


class ConfigError(MetricLearnError, ValueError):
    pass


class NegativeDivergenceWarning(RuntimeWarning):
    """A Sinkhorn divergence came out below -1e-9."""


class DegenerateClusters(RuntimeWarning):
    """All within-class distances are zero; the Dunn index is infinite."""
