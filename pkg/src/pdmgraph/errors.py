"""Exception hierarchy.

Two families matter to callers: :class:`ValidationError` (bad arguments,
configs or specs) and :class:`DataError` (the data itself cannot support the
requested computation). The CLI maps them to distinct exit codes.
"""


class PdmError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PdmError):
    pass


class DataError(PdmError):
    pass


# ingest
class FormatError(DataError):
    pass


class SchemaError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class UntypeableColumnError(DataError):
    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"column {column!r} has no non-missing values")


class DegenerateDatasetError(DataError):
    pass


# stats
class InsufficientDataError(DataError):
    pass


class DegenerateTableError(DataError):
    pass


class UndefinedFError(DataError):
    pass


class EncodingError(DataError):
    def __init__(self, column, offending):
        self.column = column
        self.offending = list(offending)
        super().__init__(f"column {column!r} is not binary-coded; offending values: {self.offending}")


# graph / community / scoring
class EmptyGraphError(DataError):
    pass


class UndefinedModularityError(DataError):
    pass


class NoStructureError(DataError):
    pass


class EmptyCommunityError(DataError):
    pass


class NotSymmetricError(ValidationError):
    pass


class IoError(PdmError, OSError):
    pass


# sampling / evaluate
class EmptyDatasetError(DataError):
    pass


class InvalidRangeError(ValidationError):
    pass


class InsufficientMinorityError(DataError):
    pass


class DegenerateClassError(DataError):
    pass


class StratificationError(DataError):
    pass


# pipeline
class SpecError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass
