"""Exception taxonomy.

Two families matter to callers: ``DataError`` (bad inputs, files, or
configuration; CLI exit code 2) and ``NumericError`` (non-finite values where
finite math was required; CLI exit code 3).
"""


class DermError(Exception):
    """Base class for every error raised by this package."""


class DataError(DermError):
    pass


class NumericError(DermError):
    pass


# dataset
class MissingColumn(DataError):
    pass


class DuplicateImageId(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyClass(DataError):
    pass


class FractionsDoNotSumToOne(DataError):
    pass


# images / preprocessing
class EmptyImage(DataError):
    pass


class UnsupportedChannelCount(DataError):
    pass


class NotGrayscale(DataError):
    pass


class NotRGB(DataError):
    pass


class WindowLargerThanImage(DataError):
    pass


class EvenKernel(DataError):
    pass


class KernelLargerThanImage(DataError):
    pass


class MaskTooLarge(DataError):
    pass


class DimensionMismatch(DataError):
    pass


# network
class ShapeMismatch(DataError):
    pass


class NonIntegralOutputSize(DataError):
    pass


class WindowLargerThanInput(DataError):
    pass


class LabelNotBinary(DataError):
    pass


class SpecInvalid(DataError):
    pass


class NonFiniteValue(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass


# training / checkpoints
class EmptySplit(DataError):
    pass


class BadMagic(DataError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptHeader(DataError):
    pass


class TruncatedPayload(DataError):
    pass


class InsufficientLog(DataError):
    pass


# evaluation
class LengthMismatch(DataError):
    pass


class EmptyMatrix(DataError):
    pass


class SingleClass(DataError):
    pass


# explanation
class PatchLargerThanImage(DataError):
    pass
