"""Exception hierarchy.

``ValidationError`` covers bad arguments and bad data; ``FormatError`` covers
malformed or damaged files. The CLI maps the first to exit code 1 and the
second (plus ``OSError``) to exit code 2.
"""


class AurlError(Exception):
    pass


class ValidationError(AurlError, ValueError):
    pass


class FormatError(AurlError):
    pass


class ZeroNorm(ValidationError):
    pass


class ZeroNormRow(ZeroNorm):
    pass


class ZeroNormMean(ZeroNorm):
    pass


class DimMismatch(ValidationError):
    pass


class ShapeMismatch(DimMismatch):
    pass


class EmptyInput(ValidationError):
    pass


class InvalidAlpha(ValidationError):
    pass


class BadIndex(ValidationError):
    pass


class BadK(ValidationError):
    pass


class BadIter(ValidationError):
    pass


class DegenerateRow(ValidationError):
    pass


class BadSpec(ValidationError):
    pass


class BatchTooSmall(ValidationError):
    pass


class StaleCache(ValidationError):
    pass


class EmptyData(ValidationError):
    pass


class LabelOutOfVocab(ValidationError):
    pass


class MissingClass(ValidationError):
    pass


class SingleClass(ValidationError):
    pass


class EmptyVocab(ValidationError):
    pass


class RaggedGroups(ValidationError):
    pass


class RejectionExhausted(ValidationError):
    pass


class NotThreeDim(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class BadHeader(FormatError):
    pass


class BadRow(FormatError):
    pass


class DuplicateId(FormatError):
    pass


class CorruptFile(FormatError):
    pass


class VersionMismatch(FormatError):
    pass
