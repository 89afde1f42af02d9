"""Exception hierarchy.

``ValidationError`` subclasses map to CLI exit code 1, every other
``ThyroFNAError`` to exit code 2.
"""


class ThyroFNAError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(ThyroFNAError):
    """Bad user input: malformed files, configs or preconditions."""


class MalformedManifest(ValidationError):
    pass


class DuplicateId(ValidationError):
    pass


class MissingFile(ValidationError):
    def __init__(self, record_id, path):
        super().__init__(f"record {record_id!r}: file not found: {path}")
        self.record_id = record_id
        self.path = path


class UnlabeledRecord(ValidationError):
    pass


class EmptyImage(ValidationError):
    pass


class InvalidCanonicalSize(ValidationError):
    pass


class MalformedProposalFile(ValidationError):
    pass


class OutOfBoundsBox(ValidationError):
    pass


class SplitViolation(ValidationError):
    pass


class MixedSplit(ValidationError):
    pass


class EmptyClass(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class SingleClassInput(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ConfigError(ValidationError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class EmptySplit(ThyroFNAError):
    pass


class UnknownBackbone(ValidationError):
    pass


class DivergedLoss(ThyroFNAError):
    pass


class UnloadedParameters(ThyroFNAError):
    pass


class MissingBaseCheckpoint(ThyroFNAError):
    pass


class CheckpointMismatch(ValidationError):
    pass


class UntrainedBackbone(ThyroFNAError):
    pass


class IoFailure(ThyroFNAError):
    pass
