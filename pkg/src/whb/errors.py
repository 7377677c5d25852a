"""Exception hierarchy shared by all whb modules."""


class WhbError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(WhbError):
    """A binary file (WHB1 hidden states or WHT1 transform) is malformed:
    bad magic, unsupported version, truncated payload, or non-finite data."""


class PairsParseError(WhbError):
    """A sentence-pair TSV row is malformed. Messages carry the 1-based
    line number."""


class ConfigError(WhbError):
    """Inputs are inconsistent with each other or with a configuration:
    layer out of range, dimension mismatch, missing ids, empty grids."""


class DegenerateInputError(WhbError):
    """Numerically degenerate input for which the requested quantity is
    undefined: zero vectors in cosine, constant sequences in rank
    correlation, zero covariance in whitening."""
