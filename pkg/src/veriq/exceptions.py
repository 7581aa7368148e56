"""Exception hierarchy shared by all veriq modules."""


class VeriqError(Exception):
    """Base class for every error raised by veriq."""


class InvalidKeyError(VeriqError, ValueError):
    pass


class SchemaError(VeriqError, ValueError):
    pass


class EmptyPopulationError(VeriqError, ValueError):
    pass


class TamperError(VeriqError):
    """One or more tuples failed MAC verification."""

    def __init__(self, ids, message=None):
        self.ids = sorted(int(i) for i in ids)
        super().__init__(message or f"MAC verification failed for ids {self.ids}")


class WithheldTupleError(VeriqError):
    """The server did not return every requested tuple."""

    def __init__(self, ids):
        self.ids = sorted(int(i) for i in ids)
        super().__init__(f"server withheld requested ids {self.ids}")


class EmptyAggregateError(VeriqError, ValueError):
    """Avg/StdDev over zero matching tuples."""


class UndefinedEstimateError(EmptyAggregateError):
    """Avg/StdDev estimate requested from a sketch with no matching entries."""


class InvalidInfluenceError(VeriqError, ValueError):
    pass


class UnboundedSampleSizeError(VeriqError, ValueError):
    pass


class NoMismatchError(VeriqError, ValueError):
    """show-work audit invoked on responses that agree."""


class ConfigError(VeriqError, ValueError):
    pass


class UndeterrableError(VeriqError, ValueError):
    """Verification never catches a cheat, so no alpha deters it."""


class UnsupportedStrategyError(VeriqError, ValueError):
    pass
