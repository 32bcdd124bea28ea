"""Exception types shared across the package."""


class CrossriskError(Exception):
    """Base class for errors raised by this package."""


class InputError(CrossriskError):
    """Unusable input: missing files, bad columns, invalid config values."""


class NumericalError(CrossriskError):
    """Numerical failure that survived the usual mitigations (e.g. a kernel
    matrix that stays indefinite after jitter escalation)."""
