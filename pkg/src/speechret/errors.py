"""Exception types shared across the package."""


class SpeechretError(Exception):
    """Base class for all package errors."""


class ConfigError(SpeechretError):
    """Invalid configuration value or combination."""


class DimensionError(SpeechretError):
    """Operand shapes do not conform; message names the operand."""


class DegenerateInputError(SpeechretError):
    """Input is structurally too small or empty for the operation."""


class ZeroNormError(DegenerateInputError):
    """Vector norm below the guard threshold where a direction is required."""


class VocabularyError(SpeechretError):
    """A word is not present in the relevant vocabulary."""


class EvaluationError(SpeechretError):
    """Metric cannot be computed on the given inputs."""


class AlignmentError(SpeechretError):
    """Two structures that must share ids/axes do not line up."""


class DivergenceError(SpeechretError):
    """Training produced a non-finite loss or gradient."""


class CorpusIOError(SpeechretError):
    """Base class for corpus/checkpoint file problems."""


class FormatError(CorpusIOError):
    """File does not start with the expected magic bytes."""


class VersionError(CorpusIOError):
    """File declares an unsupported format version."""


class TruncatedFileError(CorpusIOError):
    """File is shorter than its metadata claims."""


class ChecksumError(CorpusIOError):
    """Stored checksum does not match the payload."""
