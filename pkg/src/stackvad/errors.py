"""Exception hierarchy shared across the toolkit."""


class VadError(Exception):
    """Base class for all toolkit errors."""


class DataError(VadError):
    """Bad or unusable input data."""


class MalformedHeader(DataError):
    pass


class UnsupportedEncoding(DataError):
    pass


class InvalidConfig(VadError, ValueError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass


class LengthMismatch(DataError, ValueError):
    pass


class EmptyDataset(DataError, ValueError):
    pass


class SingleClass(DataError, ValueError):
    """Only one class label is present where two are required."""


class TooFewRows(DataError, ValueError):
    pass


class SingleClassPartition(SingleClass):
    pass


class IterationLimit(VadError):
    """The solver hit its iteration cap before meeting the KKT tolerance."""
