"""Exception hierarchy shared by all gaitid modules."""


class GaitError(Exception):
    """Base class for every error raised by gaitid."""


class DegenerateInputError(GaitError, ValueError):
    """Input too short or otherwise unusable for the requested operation."""


class ParseError(GaitError, ValueError):
    """A text file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(GaitError, ValueError):
    """A file or stream violates its declared format."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"offset {offset}: {message}"
        super().__init__(message)


class UnsupportedVersionError(FormatError):
    pass


class SizeError(GaitError, ValueError):
    pass


class ShapeError(GaitError, ValueError):
    pass


class ConfigError(GaitError, ValueError):
    pass


class DatasetError(GaitError, ValueError):
    pass


class CalibrationError(GaitError, ValueError):
    pass


class ModeError(GaitError, ValueError):
    """Axis mode (3 vs 6 channels) does not match what the operation expects."""
