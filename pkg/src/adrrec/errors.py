"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class ADRRecError(Exception):
    exit_code = 1


class ConfigError(ADRRecError, ValueError):
    exit_code = 2


class DataError(ADRRecError):
    exit_code = 3


class IngestError(DataError):
    pass


class EmptyCorpusError(DataError):
    pass


class ProtocolError(DataError):
    pass


class BoundsError(DataError, IndexError):
    pass


class NumericalError(ADRRecError, FloatingPointError):
    exit_code = 4
