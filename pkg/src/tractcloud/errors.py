"""Exception hierarchy.

``UsageError`` maps to CLI exit code 1, ``DataError`` (and subclasses) to
exit code 2.
"""


class TractCloudError(Exception):
    pass


class UsageError(TractCloudError):
    pass


class DataError(TractCloudError):
    pass


# --- file I/O ---

class BadMagic(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class VersionMismatch(DataError):
    pass


class UnsupportedScalars(DataError):
    pass


class TruncatedStream(DataError):
    pass


class TruncatedFile(DataError):
    pass


class CountMismatch(DataError):
    pass


class IoFailure(DataError):
    pass


class LengthMismatch(DataError):
    pass


class OutOfRangeLabel(DataError):
    pass


class ParseError(DataError):
    pass


class UnknownKey(DataError):
    pass


class ValueOutOfRange(DataError):
    pass


# --- geometry / features ---

class DegenerateStreamline(DataError):
    pass


class EmptyTractogram(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


class MixedResampling(DataError):
    pass


# --- model / training ---

class DimMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class ModelConfigMismatch(DataError):
    pass


# --- metrics ---

class EmptyMatrix(DataError):
    pass


class EmptyTract(DataError):
    pass


class EmptyAtlasTract(DataError):
    pass


class DegenerateBounds(DataError):
    pass


class GridMismatch(DataError):
    pass


class EmptyGrid(DataError):
    pass


# --- synthetic data ---

class InvalidSpec(DataError):
    pass
