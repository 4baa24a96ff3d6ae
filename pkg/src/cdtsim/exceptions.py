class CdtError(Exception):
    """Base class for every error raised by cdtsim."""


class ValidationError(CdtError, ValueError):
    """Bad input data, configuration or tree structure."""


class ConfigError(ValidationError):
    """Invalid run configuration or hyperparameters."""


class OracleError(CdtError):
    """Base class for failures talking to an external model."""


class TransportError(OracleError):
    """A provider call failed in transit; safe to retry."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class BudgetError(OracleError):
    """Prompt exceeds the provider's budget."""


class ProtocolError(OracleError):
    """Provider output could not be parsed, even after a reprompt."""


class MissingTranscriptError(OracleError):
    """Replay mode found no recorded response for a request."""


class DegenerateEmbeddingError(CdtError, ValueError):
    """A zero vector where a direction was required."""


class NodeError(CdtError):
    """An error raised while processing a specific tree node."""

    def __init__(self, path: str, cause: Exception):
        super().__init__(f"{path}: {cause}")
        self.path = path
        self.cause = cause


class AggregateError(CdtError):
    def __init__(self, message: str, errors: list):
        super().__init__(f"{message} ({len(errors)} error(s)): " + "; ".join(str(e) for e in errors))
        self.errors = errors
