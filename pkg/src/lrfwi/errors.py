"""Exception hierarchy for lrfwi.

Every error names the invariant or contract it violates in its message.
"""


class LrfwiError(Exception):
    """Base class for all lrfwi errors."""


class BadShapeError(LrfwiError):
    """A grid, matrix, or factor pair has an inadmissible shape."""


class NonPositiveSlownessError(LrfwiError):
    """A squared-slowness value is zero, negative, or not finite."""


class NonFiniteEntryError(LrfwiError):
    """A matrix contains NaN or infinite entries."""


class ShapeMismatchError(LrfwiError):
    """Two operands have incompatible shapes."""


class WrongDomainError(LrfwiError):
    """A frequency slice is in the wrong domain for the requested transform."""


class BadRatioError(LrfwiError):
    """A sampling ratio is outside (0, 1]."""


class SingularOperatorError(LrfwiError):
    """The discrete Helmholtz operator is numerically singular."""


class BudgetTooTightError(LrfwiError):
    """The completion residual cannot be driven down to the requested budget.

    Carries the best factorization reached and the Pareto trace so callers
    can continue with the best available iterate.
    """

    def __init__(self, message, factorization=None, trace=None):
        super().__init__(message)
        self.factorization = factorization
        self.trace = trace


class EmptyScheduleError(LrfwiError):
    """A frequency-continuation schedule contains no bands."""


class BadSpecError(LrfwiError):
    """A model/problem specification string or parameter set is invalid."""


class ZeroReferenceError(LrfwiError):
    """The reference signal of an SNR computation has zero norm."""


class ConfigError(LrfwiError):
    """An experiment configuration file or override is invalid."""
