"""Exception hierarchy shared by the library modules and the CLI exit-code contract."""
from typing import Iterable, Optional


class InputError(ValueError):
    """Bad input files, formats or failed preconditions (CLI exit code 2)."""


class FormatError(InputError):
    """A file does not match its declared format."""

    def __init__(
        self,
        message: str,
        ordinal: Optional[int] = None,
        offset: Optional[int] = None,
        line: Optional[int] = None,
    ):
        self.ordinal = ordinal
        self.offset = offset
        self.line = line
        location = []
        if ordinal is not None:
            location.append(f"doc #{ordinal}")
        if offset is not None:
            location.append(f"byte offset {offset}")
        if line is not None:
            location.append(f"line {line}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class EmptyCorpusError(InputError):
    """An operation needs at least one document."""


class InvalidParameterError(InputError):
    """A parameter is outside its documented range."""


class CorpusMismatchError(InputError):
    """Two inputs that must describe the same documents do not."""


class GatewayError(RuntimeError):
    """Failure talking to an external annotation provider (CLI exit code 3)."""

    def __init__(self, message: str, task_id: Optional[str] = None):
        self.task_id = task_id
        if task_id is not None:
            message = f"{message} [task {task_id}]"
        super().__init__(message)


class ProviderError(GatewayError):
    """Provider timed out or kept failing after the configured retries."""


class ResponseParseError(GatewayError):
    """Provider answered but the answer does not have the expected shape."""


class PayloadTooLargeError(GatewayError):
    """Task payload exceeds the configured size budget."""


class RerankSubsetError(GatewayError):
    """A rerank answer named latents that were not among the candidates."""

    def __init__(self, offending_ids: Iterable[int], task_id: Optional[str] = None):
        self.offending_ids = sorted(int(i) for i in offending_ids)
        super().__init__(
            f"Rerank response is not a subset of the candidates: {self.offending_ids}",
            task_id=task_id,
        )
