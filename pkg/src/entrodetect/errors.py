"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ValidationError (and subclasses) -> 1,
OSError -> 2, UsageError -> 64.
"""


class ValidationError(ValueError):
    """Input data or arguments violate a documented contract."""


class DimensionError(ValidationError):
    """Shape mismatch between arrays; message names both shapes."""


class ModelFormatError(ValidationError):
    """Base class for model-file format problems."""


class BadMagicError(ModelFormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(ModelFormatError):
    """File declares a format version this build cannot read."""


class TruncatedFileError(ModelFormatError):
    """File ends before the declared payload is complete."""


class ChecksumError(ModelFormatError):
    """Payload bytes do not match the stored CRC-32."""


class TrainingDivergedError(RuntimeError):
    """Non-finite loss or gradient encountered during optimization."""


class OracleError(RuntimeError):
    """A pairwise equivalence oracle failed; message names the pair."""


class UsageError(Exception):
    """Bad command line; message holds the usage text."""
