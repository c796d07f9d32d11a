"""Exception types raised by the megmatch engine.

Every contract violation maps to a named class so callers (and the CLI's
exit-code logic) can distinguish bad input from a genuine empty result.
"""


class MegmatchError(Exception):
    """Base class for all engine errors."""


# -- shape / size mismatches -------------------------------------------------

class LengthMismatchError(MegmatchError, ValueError):
    pass


class DimMismatchError(MegmatchError, ValueError):
    pass


class RateMismatchError(MegmatchError, ValueError):
    pass


class ShapeMismatchError(MegmatchError, ValueError):
    pass


class TooShortError(MegmatchError, ValueError):
    pass


class EmptyInputError(MegmatchError, ValueError):
    pass


class KTooLargeError(MegmatchError, ValueError):
    pass


# -- event tables / timelines --------------------------------------------------

class MissingColumnError(MegmatchError, ValueError):
    pass


class MalformedNumberError(MegmatchError, ValueError):
    pass


class NonMonotonicTimeError(MegmatchError, ValueError):
    def __init__(self, message: str, row_index: int):
        super().__init__(message)
        self.row_index = row_index


class InsertionOutOfRangeError(MegmatchError, ValueError):
    pass


class TotalTooShortError(MegmatchError, ValueError):
    pass


# -- contrastive / training ----------------------------------------------------

class NotSquareError(MegmatchError, ValueError):
    pass


class NonPositiveTemperatureError(MegmatchError, ValueError):
    pass


class InsufficientDataError(MegmatchError, ValueError):
    pass


# -- retrieval -------------------------------------------------------------------

class StreamTooShortError(MegmatchError, ValueError):
    pass


class EmptyPoolError(MegmatchError, ValueError):
    pass


class EmptyPairsError(MegmatchError, ValueError):
    pass


class OffsetOutOfRangeError(MegmatchError, ValueError):
    pass


# -- detection ---------------------------------------------------------------------

class BadConfigError(MegmatchError, ValueError):
    pass


class ConstantTargetError(MegmatchError, ValueError):
    pass


class DegenerateLabelsError(MegmatchError, ValueError):
    pass


# -- synthesis / files ----------------------------------------------------------------

class PlantTooLongError(MegmatchError, ValueError):
    pass


class FileFormatError(MegmatchError, ValueError):
    """Corrupt or unreadable data file; carries the offending path."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(message)
        self.path = path
