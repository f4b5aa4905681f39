""" Exceptions raised by the spvd package.

Every error derives from `SpvdError`. Each class builds its message in `__str__` and appends
a `hint()` that tells the user how to resolve the problem. The CLI maps `ConfigError` to exit
code 2 and every other `SpvdError` to exit code 3.
"""

from typing import Optional, Union


class SpvdError(Exception):
    """Base class of all package errors."""

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        message = self.message
        if hint := self.hint():
            message += f" {hint}"
        return message

    def hint(self) -> str:
        """Return a message with additional information on how to resolve the error."""

        return ""


class ConfigError(SpvdError, ValueError):
    """An invalid configuration value or combination of values."""

    def hint(self) -> str:
        return "Check the run configuration or the arguments passed to the function."


class ContractError(SpvdError, ValueError):
    """A precondition of an operation does not hold."""


class DimensionError(SpvdError, ValueError):
    """Operand shapes are incompatible."""

    def hint(self) -> str:
        return "Only identical shapes or per-row vectors broadcast."


class IndexRangeError(SpvdError, IndexError):
    """An index lies outside the indexed rows, or segment ids are not sorted."""


class NumericalError(SpvdError, FloatingPointError):
    """An operation produced NaN or Inf."""

    def hint(self) -> str:
        return "Lower the learning rate or check the inputs for extreme values."


class ParseError(SpvdError):
    """A point cloud file could not be parsed.

    The location is a 1-based line number for text content and a byte offset for binary
    payloads.
    """

    def __init__(
        self,
        path: str,
        message: str,
        *,
        line: Optional[int] = None,
        offset: Optional[int] = None,
    ):
        super().__init__(message)
        self.path = path
        self.line = line
        self.offset = offset

    @property
    def location(self) -> Union[str, None]:
        if self.line is not None:
            return f"line {self.line}"
        if self.offset is not None:
            return f"byte offset {self.offset}"
        return None

    def __str__(self) -> str:
        message = f"Parse error ({self.path}"
        if location := self.location:
            message += f", {location}"
        message += f"): {self.message}"
        return message


class CheckpointError(SpvdError):
    """A checkpoint file is corrupt, truncated, or of an unsupported version."""

    def __init__(self, path: str, message: str):
        super().__init__(message)
        self.path = path

    def __str__(self) -> str:
        message = f"Checkpoint error ({self.path}): {self.message}"
        if hint := self.hint():
            message += f" {hint}"
        return message

    def hint(self) -> str:
        if "version" in self.message:
            return "The file was written by an incompatible release."
        return ""
