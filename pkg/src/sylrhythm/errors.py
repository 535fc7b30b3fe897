"""Exception hierarchy.

The three base classes map onto CLI exit codes: configuration problems (2),
bad input data (3) and numerical failures (4).
"""


class SylRhythmError(Exception):
    exit_code = 1


class ConfigError(SylRhythmError, ValueError):
    exit_code = 2


class DataError(SylRhythmError, ValueError):
    exit_code = 3


class NumericalError(SylRhythmError, ArithmeticError):
    exit_code = 4


class ManifestError(DataError):
    pass


class AudioFormatError(DataError):
    pass


class AnnotationError(DataError):
    pass


class NoPeakError(NumericalError):
    """Raised when a spectrum is identically zero inside the search band."""


class ConvergenceError(NumericalError):
    pass
