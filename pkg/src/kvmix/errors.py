"""Exception taxonomy shared by all kvmix modules.

Every failure the library raises deliberately is a subclass of
:class:`KVMixError`, so callers can catch one type at an API boundary
(the CLI does exactly that to map failures onto exit codes).
"""

__all__ = [
    "KVMixError",
    "InvalidInput",
    "InvalidThresholds",
    "CorruptBuffer",
    "EmptyWindow",
    "NothingToFlush",
    "UndefinedMetric",
    "BudgetInfeasible",
    "UnsupportedFormat",
    "CorruptFile",
]


class KVMixError(Exception):
    """Base class for every error raised by this package."""


class InvalidInput(KVMixError, ValueError):
    """An argument violates a documented precondition."""


class InvalidThresholds(InvalidInput):
    """Tier thresholds are out of order (low cutoff above the full cutoff)."""


class CorruptBuffer(KVMixError, ValueError):
    """A packed code buffer's byte length is inconsistent with its header."""


class EmptyWindow(KVMixError, ValueError):
    """An importance score was requested before any query rows were seen."""


class NothingToFlush(KVMixError, RuntimeError):
    """flush() was called while the residual buffer is empty."""


class UndefinedMetric(KVMixError, RuntimeError):
    """A cache statistic was requested before any block has been flushed."""


class BudgetInfeasible(KVMixError, ValueError):
    """No frontier point satisfies the requested bit budget."""


class UnsupportedFormat(KVMixError, ValueError):
    """A tensor dump has an unknown magic tag or version."""


class CorruptFile(KVMixError, ValueError):
    """A tensor dump is truncated or internally inconsistent."""
