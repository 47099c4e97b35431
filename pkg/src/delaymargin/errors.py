"""Exception hierarchy shared by all modules."""


class DelayMarginError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(DelayMarginError, ValueError):
    """Malformed system description (bad JSON, wrong shapes, bad fields)."""


class HypothesisHViolation(DelayMarginError):
    """The neutral terms do not satisfy sum ||A_-l|| < 1."""


class CharacteristicRootError(DelayMarginError, ZeroDivisionError):
    """The characteristic matrix is singular at the requested point."""

    def __init__(self, s):
        super().__init__(f"characteristic matrix is singular at s={s!r} (characteristic root)")
        self.s = s


class UnstableSystemError(DelayMarginError):
    """An operation that needs a stable nominal system was given an unstable or uncertified one."""


class NoCertificateError(DelayMarginError):
    """A requested bound cannot be certified (non-decaying tail, non-integrable derivative...)."""


class UnsupportedError(DelayMarginError):
    """The request is outside the supported class (e.g. non-commensurate neutral delays)."""


class PreconditionError(DelayMarginError, ValueError):
    """A documented precondition (step size, delay positivity, theorem class) is violated."""
