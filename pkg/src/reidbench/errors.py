"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ReidError(Exception):
    exit_code = 1


class UsageError(ReidError):
    exit_code = 2


# embedio
class MissingFileError(ReidError):
    exit_code = 10


class SizeMismatchError(ReidError):
    exit_code = 11


class BadValueError(ReidError):
    exit_code = 12


class MalformedManifestError(ReidError):
    exit_code = 13


class IoFailureError(ReidError):
    exit_code = 14


# distances
class DimMismatchError(ReidError):
    exit_code = 20


class ZeroVectorError(ReidError):
    exit_code = 21


# metrics
class AllQueriesSkippedError(ReidError):
    exit_code = 30


# rerank / kernels / sampling
class BadParamsError(ReidError):
    exit_code = 40


class ShapeMismatchError(ReidError):
    exit_code = 41


class BadLabelError(ReidError):
    exit_code = 42


class DegenerateBatchError(ReidError):
    exit_code = 43


class EmptyMapError(ReidError):
    exit_code = 44


class NotEnoughIdentitiesError(ReidError):
    exit_code = 50
