"""Exception hierarchy. Everything raised by this package derives from DiffadError."""


class DiffadError(Exception):
    """Base class for all package errors."""

    kind = "error"


class ConfigError(DiffadError):
    """Invalid configuration value; the message names the offending field."""

    kind = "config"


class ContractError(DiffadError):
    """A call violated an operation precondition (shapes, ranges, dtypes)."""

    kind = "contract"


class NumericError(DiffadError):
    """A numeric stage produced non-finite values."""

    kind = "numeric"

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message if step_index is None else f"{message} (step {step_index})")
        self.step_index = step_index


class DataError(DiffadError):
    """Dataset or file-layout problem."""

    kind = "data"


class UndefinedMetricError(DiffadError):
    """A metric is undefined for the given inputs (e.g. single-class labels)."""

    kind = "metric"


class ProtocolError(DiffadError):
    """Wire-format violation (bad magic, version, framing)."""

    kind = "protocol"

    def __init__(self, message: str, endpoint: str | None = None):
        super().__init__(message if endpoint is None else f"{endpoint}: {message}")
        self.endpoint = endpoint


class ServerConnectionError(DiffadError):
    """The model server could not be reached."""

    kind = "connection"

    def __init__(self, message: str, endpoint: str | None = None):
        super().__init__(message if endpoint is None else f"{endpoint}: {message}")
        self.endpoint = endpoint


class RemoteModelError(DiffadError):
    """The model server reported a request or model failure."""

    kind = "remote"

    def __init__(self, message: str, endpoint: str | None = None, status: int | None = None):
        detail = message if endpoint is None else f"{endpoint}: {message}"
        if status is not None:
            detail = f"{detail} (HTTP {status})"
        super().__init__(detail)
        self.endpoint = endpoint
        self.status = status


class PipelineStageError(DiffadError):
    """A pipeline stage failed; carries the stage name and the original error."""

    kind = "pipeline"

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
