"""Exception hierarchy shared by all flowmeter modules."""


class FlowmeterError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FlowmeterError, ValueError):
    """Invalid parameters or configuration values."""


class NonPositiveObservationTime(FlowmeterError, ValueError):
    """A sampling instant does not lie strictly after the release time."""


class ZeroMeanCount(FlowmeterError, ValueError):
    """An observation has zero likelihood under every hypothesis."""


class DegenerateHypotheses(FlowmeterError, ValueError):
    """Two hypotheses produce identical mean-count rows."""


class EqualRowSums(FlowmeterError, ValueError):
    """The closed-form Holder exponent is undefined for equal row sums."""


class EnumerationTooLarge(FlowmeterError, ValueError):
    """Exact enumeration would exceed the configured size limit."""


class EmptyWindow(FlowmeterError, ValueError):
    """A search window contains no admissible sampling times."""


class NoRootInWindow(FlowmeterError, ValueError):
    """No sign change of a stationarity condition inside the window."""


class BracketError(FlowmeterError, ValueError):
    """Root-finding bracket does not enclose a sign change."""


class DegeneratePosterior(FlowmeterError, ArithmeticError):
    """Posterior mass underflowed even after log-stabilisation."""


class ZeroVariance(FlowmeterError, ArithmeticError):
    """A count variance required by the linear estimator vanished."""


class SingularityInRange(FlowmeterError, ValueError):
    """Fisher information vanishes inside the prior support."""


class BvpNoConvergence(FlowmeterError, ArithmeticError):
    """Newton iteration for the boundary-value problem did not converge."""
