"""Exception hierarchy shared by all trajex modules."""


class TrajexError(Exception):
    """Base class for all errors raised by trajex."""


class ConfigError(TrajexError, ValueError):
    """A configuration document failed validation.

    The message is prefixed with the offending field name.
    """

    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class DegenerateConfiguration(TrajexError, ValueError):
    pass


class TooFewCorrespondences(TrajexError, ValueError):
    pass


class PointAtInfinity(TrajexError, ArithmeticError):
    pass


class MalformedRecord(TrajexError, ValueError):
    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class NonMonotonicTimestamps(UserWarning):
    """Emitted when a log is not sorted by time; the log is stable-sorted."""


class NumericalBreakdown(TrajexError, ArithmeticError):
    pass


class TimestampRegression(TrajexError, ValueError):
    pass


class TooShort(TrajexError, ValueError):
    pass


class NoCameraDetections(TrajexError, ValueError):
    pass


class UnknownFrame(TrajexError, KeyError):
    pass


class InvalidLaneGeometry(TrajexError, ValueError):
    pass


class OutOfRange(TrajexError, ValueError):
    pass


class NoCrossing(TrajexError, ValueError):
    pass


class MultipleCrossings(TrajexError, ValueError):
    """The reference distance crosses ``d`` more than once.

    ``times`` holds every crossing time in increasing order.
    """

    def __init__(self, distance, times):
        self.distance = distance
        self.times = list(times)
        super().__init__(f"distance {distance} crossed {len(self.times)} times")


class GridMismatch(TrajexError, ValueError):
    pass


class MissingMode(TrajexError, KeyError):
    pass


class AssociationError(TrajexError):
    """A reference vehicle could not be associated with any extracted track."""
