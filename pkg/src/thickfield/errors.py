"""Exception hierarchy.

Every failure raised by the library derives from :class:`DTFError`, and most
also derive from :class:`ValueError` so callers that only care about "bad
input" can catch that.
"""


class DTFError(Exception):
    """Base class for all library errors."""


class InvalidSpec(DTFError, ValueError):
    pass


class NonCommensurateRange(InvalidSpec):
    pass


class DimMismatch(DTFError, ValueError):
    pass


class NonFiniteInput(DTFError, ValueError):
    pass


class OutOfRange(DTFError, ValueError):
    pass


class RangeError(DTFError, ValueError):
    pass


class SingularCalibration(DTFError, ValueError):
    pass


class DegenerateRay(DTFError, ValueError):
    pass


class BadScale(DTFError, ValueError):
    pass


class SpecMismatch(DTFError, ValueError):
    pass


class SliceOutOfRange(DTFError, IndexError):
    pass


class ConfigError(DTFError, ValueError):
    pass


# tensor blob IO
class BlobError(DTFError, ValueError):
    pass


class BadMagic(BlobError):
    pass


class TruncatedPayload(BlobError):
    pass


class DimOverflow(BlobError):
    pass


# KITTI parsing
class ParseError(DTFError, ValueError):
    pass


class MissingKey(ParseError):
    pass


class MalformedNumber(ParseError):
    pass


class WrongArity(ParseError):
    pass


class WrongFieldCount(ParseError):
    pass


class TruncatedRecord(ParseError):
    pass


class WrongBitDepth(ParseError):
    pass


class WrongChannelCount(ParseError):
    pass
