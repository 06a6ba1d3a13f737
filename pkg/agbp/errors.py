"""Exception hierarchy shared by the library, the CLI and the HTTP service."""
from typing import Optional


class AgbpError(Exception):
    """Base class for every error raised by agbp."""


class ModelValidationError(AgbpError, ValueError):
    """A linear model, partition or generator spec violates its invariants."""


class ParseError(ModelValidationError):
    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")


class GraphError(AgbpError):
    pass


class UnderdeterminedVariableError(GraphError):
    def __init__(self, variables):
        self.variables = list(variables)
        preview = ", ".join(str(v) for v in self.variables[:10])
        more = "" if len(self.variables) <= 10 else f" (+{len(self.variables) - 10} more)"
        super().__init__(
            f"underdetermined variable(s) {preview}{more}: a variable needs at least two "
            "factors to send a branch message, or a leaf factor acting as its prior"
        )


class MessageStateError(AgbpError):
    pass


class AnalysisError(AgbpError):
    def __init__(self, message: str, estimate: Optional[float] = None):
        self.estimate = estimate
        super().__init__(message)


class ConfigError(AgbpError):
    pass
