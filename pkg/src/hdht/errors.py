"""Exception hierarchy shared by all modules."""


class HDHTError(Exception):
    """Base class for errors raised by this package."""


class RankDeficient(HDHTError):
    """A design restricted to a subset does not have full column rank."""


class NotSymmetric(HDHTError):
    pass


class NotPositiveDefinite(HDHTError):
    pass


class DimensionMismatch(HDHTError, ValueError):
    pass


class TooFewObservations(HDHTError, ValueError):
    pass


class SubsetTooLarge(HDHTError, ValueError):
    """``2|S|`` exceeds ``min(n1, n2)``, or the empty subset was not allowed."""


class BudgetExceeded(HDHTError):
    """An exhaustive enumeration would exceed the configured budget."""


class MissingThreshold(HDHTError, KeyError):
    pass
