"""Exception types shared across the package."""


class ConjparseError(Exception):
    """Base class for all package errors."""


class ParseError(ConjparseError):
    """Malformed query text; message names the offending span."""


class CapacityError(ConjparseError):
    """Input exceeds a configured size limit (variables, sequence length)."""


class VocabError(ConjparseError):
    """Token not present in a closed vocabulary."""


class DataError(ConjparseError):
    """Corpus or example violates a data contract."""


class ConfigError(ConjparseError):
    """Invalid or inconsistent configuration."""


class NumericError(ConjparseError):
    """Non-finite values or failed numeric checks during training."""


class ContractViolation(ConjparseError):
    """An internal API precondition was violated (programming error)."""
