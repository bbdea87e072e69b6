"""Error taxonomy.

Every error raised by this package derives from :class:`IronyNetError`; the
``category`` attribute drives both the CLI exit code (config/format -> 2,
data -> 3, numerical -> 4) and the HTTP status chosen by the service layer.
"""


class IronyNetError(Exception):
    category = "internal"


class ConfigError(IronyNetError):
    """Invalid configuration: bad keys, bad values, missing required setup."""

    category = "config"


class FormatError(ConfigError):
    """Malformed input file (embeddings, edge dumps, feature files, model files)."""


class DataError(IronyNetError):
    """Dataset-level problems: missing files, bad records, bad labels."""

    category = "data"


class LabelError(DataError):
    """Label outside the {0, 1} domain."""


class EmptyInputError(DataError):
    """An encoder received an empty token sequence."""


class InsufficientSamplesError(DataError):
    """A statistic that needs n >= 2 samples was given fewer."""


class FeatureDimError(DataError):
    """A precomputed feature vector does not match the declared dimension."""


class NumericalError(IronyNetError):
    """Numerical failure: non-finite values, failed decompositions."""

    category = "numerical"


class ZeroNormError(NumericalError):
    """Cosine similarity was asked to normalize a zero vector."""


class SymmetryError(NumericalError):
    """A matrix that must be symmetric is not, within tolerance."""


class ProbeFailureError(NumericalError):
    """A finite-difference probe produced a non-finite function value."""


class RetriableError(IronyNetError):
    """Transient network failure; callers may retry or fall back to offline data."""

    category = "network"
