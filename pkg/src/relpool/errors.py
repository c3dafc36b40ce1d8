"""Exception hierarchy shared by every relpool module."""


class RelpoolError(Exception):
    """Base class for all relpool errors."""


class SchemaError(RelpoolError, ValueError):
    """A schema document or an event does not satisfy the attribute vocabulary."""


class DataError(RelpoolError, ValueError):
    """Input data (observations, matrices, configs) is malformed or unreadable."""


class InsufficientDataError(RelpoolError, ValueError):
    """A statistical operation was asked to work with too few nonempty cells."""


class StarvedEstimateError(RelpoolError):
    """One or more column probabilities could not be estimated from the data.

    Attributes:
        columns: the column events (as ``attr=value`` strings) with no support.
    """

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(
            "insufficient data for column(s): " + "; ".join(self.columns)
        )
