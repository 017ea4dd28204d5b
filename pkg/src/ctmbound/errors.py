"""Exception types shared across the package."""


class CTMBoundError(Exception):
    """Base class for all errors raised by ctmbound."""


class NotSymmetric(CTMBoundError):
    pass


class NoConvergence(CTMBoundError):
    pass


class NonPositiveIterate(CTMBoundError):
    pass


class NonPositiveVector(CTMBoundError):
    pass


class WidthTooLarge(CTMBoundError):
    pass


class OddWidth(CTMBoundError, ValueError):
    pass


class IllegalState(CTMBoundError, ValueError):
    pass


class DimensionMismatch(CTMBoundError, ValueError):
    pass


class ZeroDenominator(CTMBoundError):
    pass


class FormatVersionMismatch(CTMBoundError):
    pass


class ChecksumMismatch(CTMBoundError):
    pass


class ModelMismatch(CTMBoundError):
    pass


class AnsatzNotPositive(CTMBoundError):
    """A trace of the eigenvector ansatz was not strictly positive.

    The Collatz-Wielandt bound is invalid for this F set, so no bound may be
    emitted.
    """

    def __init__(self, bracelet: str, value=None):
        self.bracelet = bracelet
        self.value = value
        super().__init__(f"ansatz component for {bracelet} is not positive ({value})")


class IncompleteShards(CTMBoundError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"missing or unfinished shards: {self.missing}")


class IndexOutOfRange(CTMBoundError, IndexError):
    pass
