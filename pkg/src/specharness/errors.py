"""Exception types shared across the harness."""

from __future__ import annotations


class SpecHarnessError(Exception):
    """Base class for all harness errors."""


class CorpusError(SpecHarnessError):
    """A corpus file failed to load or violates the schema."""

    def __init__(self, message: str, *, path: str | None = None, field: str | None = None):
        self.path = path
        self.field = field
        detail = message
        if path is not None:
            detail += f" [file: {path}]"
        if field is not None:
            detail += f" [field: {field}]"
        super().__init__(detail)


class InvalidTaskError(SpecHarnessError):
    """A task's reference implementation cannot produce expected outputs."""

    def __init__(self, message: str, *, task_id: str, input_id: str | None = None):
        self.task_id = task_id
        self.input_id = input_id
        super().__init__(f"{message} [task: {task_id}]" + (f" [input: {input_id}]" if input_id else ""))


class InvalidPairError(SpecHarnessError):
    """A bug pair's correct implementation fails on a required test."""

    def __init__(self, message: str, *, pair_id: str, input_id: str | None = None):
        self.pair_id = pair_id
        self.input_id = input_id
        super().__init__(f"{message} [pair: {pair_id}]" + (f" [input: {input_id}]" if input_id else ""))


class PoolStartupError(SpecHarnessError):
    """A runner worker failed to launch or handshake."""

    def __init__(self, message: str, *, worker_index: int, stderr: str = ""):
        self.worker_index = worker_index
        self.stderr = stderr
        detail = f"{message} [worker: {worker_index}]"
        if stderr:
            detail += f"\n--- worker stderr ---\n{stderr}"
        super().__init__(detail)


class InfrastructureError(SpecHarnessError):
    """The execution gateway is unavailable; distinct from an incorrect candidate."""


class CompletenessUndefinedError(SpecHarnessError):
    """All mutants were excluded, leaving nothing to score a candidate against."""


class BackendError(SpecHarnessError):
    """Base class for chat-backend failures."""


class AuthenticationError(BackendError):
    """The remote backend rejected the configured credentials."""


class ContextLengthError(BackendError):
    """The prompt exceeded the remote model's context window."""


class RetriesExhaustedError(BackendError):
    """The remote backend kept failing after the configured retries."""


class ScriptExhaustedError(BackendError):
    """A scripted backend was asked for more turns than its script holds."""
