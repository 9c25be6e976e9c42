"""Exception hierarchy shared by every csrlab module."""


class CsrError(Exception):
    """Base class; ``category`` is the machine-parsable tag printed by the CLI."""

    category = "error"


class ParameterError(CsrError, ValueError):
    category = "parameter"


class CorpusAlignmentError(CsrError):
    category = "alignment"


class EmptyCorpusError(CsrError):
    category = "empty-corpus"


class CorpusDecodeError(CsrError):
    category = "decode"


class FormatError(CsrError):
    category = "format"


class ParseError(FormatError):
    category = "parse"


class DegenerateCorpusError(CsrError):
    category = "degenerate-corpus"


class NormalizationError(CsrError):
    category = "normalization"


class SeedingError(CsrError):
    category = "seeding"


class DegenerateBatchError(CsrError):
    category = "degenerate-batch"


class DivergenceError(CsrError):
    category = "divergence"


class PairingError(CsrError):
    category = "pairing"


class ConfigError(CsrError):
    category = "config"


class DegenerateAlignmentWarning(UserWarning):
    pass


class CoverageWarning(UserWarning):
    pass


class TruncationWarning(UserWarning):
    pass
