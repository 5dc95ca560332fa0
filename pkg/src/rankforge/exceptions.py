"""Exception hierarchy shared by every rankforge module."""


class RankforgeError(Exception):
    """Base class for all errors raised by rankforge."""


class ParseError(RankforgeError, ValueError):
    """Malformed LETOR input. ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class ValidationError(RankforgeError, ValueError):
    """Input violates a documented precondition."""


class ConfigError(RankforgeError, ValueError):
    """Invalid hyperparameter or run configuration."""


class EmptyDatasetError(RankforgeError, ValueError):
    """An operation needs at least one query group."""


class UndefinedNDCGError(RankforgeError, ValueError):
    """Ideal DCG is zero, so NDCG is undefined for the query."""


class DegenerateDistributionError(RankforgeError, ValueError):
    """A label distribution has no probability mass to normalize."""


class ModelFormatError(RankforgeError, ValueError):
    """A serialized model cannot be read by this version."""


class CertificationError(RankforgeError, AssertionError):
    """A numeric certification check failed.

    Parameters
    ----------
    check : str
        Name of the failing check.
    witness : dict
        JSON-serializable description of the failing instance, enough to
        replay it.
    """

    def __init__(self, check, witness):
        self.check = check
        self.witness = witness
        super().__init__(f"{check} failed: {witness}")
