"""
Exception hierarchy for the envelope library.

The management commands map each family onto an exit code:
ConfigError -> 2, DataError -> 3, NumericalError -> 4.
"""


class EnvelopeError(Exception):
    """Base class for every error raised by the library"""


class ConfigError(EnvelopeError, ValueError):
    """Invalid configuration, arguments or dimensions"""


class DataError(EnvelopeError, ValueError):
    """Malformed, missing or mutually inconsistent input data"""


class NumericalError(EnvelopeError, ArithmeticError):
    """A numerical routine could not produce a valid result"""


class RankDeficientError(NumericalError):
    """Matrix does not have the full column rank required"""

    def __init__(self, deficient, columns):
        self.deficient = deficient
        self.columns = columns
        super().__init__(
            f"matrix is rank deficient: {deficient} of {columns} column(s) "
            f"are linearly dependent at tolerance 1e-10"
        )
