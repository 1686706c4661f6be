"""Client side of the sandboxed execution protocol.

Workers are subprocesses speaking newline-delimited JSON over stdin/stdout.
Each worker emits `{"hello":"specharness-runner","proto":1}` on start, then
answers one verdict line per request line, matched by request_id. The pool
dispatches requests to idle workers and enforces an outer wall-clock bound of
2x the request timeout by killing and replacing unresponsive workers.
"""

from __future__ import annotations

import json
import queue
import subprocess
import sys
import threading
import time
import uuid
from dataclasses import dataclass, field

from .errors import InfrastructureError, PoolStartupError

PROTO_VERSION = 1
EXPECTED_HANDSHAKE = {"hello": "specharness-runner", "proto": PROTO_VERSION}

STATUSES = frozenset(
    {"ok", "assert_fail", "runtime_error", "syntax_error", "timeout", "unserializable_output"}
)


def default_runner_command() -> list[str]:
    """Launch command for the bundled stub runner."""
    return [sys.executable, "-m", "specharness.stubrunner"]


@dataclass(frozen=True)
class ExecVerdict:
    request_id: str
    status: str
    value: object = None
    error_type: str = ""
    error_message: str = ""
    duration_ms: int = 0


@dataclass(frozen=True)
class RunnerPoolConfig:
    runner_launch_command: list[str] = field(default_factory=default_runner_command)
    pool_size: int = 1
    default_timeout_ms: int = 1000
    max_restarts: int = 8
    startup_timeout_s: float = 20.0


class _WorkerCrashed(Exception):
    pass


class _WorkerTimeout(Exception):
    pass


class _Worker:
    """One runner subprocess plus its stdout/stderr reader threads."""

    def __init__(self, index: int, command: list[str], startup_timeout_s: float):
        self.index = index
        try:
            self.proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise PoolStartupError(f"cannot launch runner: {exc}", worker_index=index)
        self._lines: queue.Queue = queue.Queue()
        self._stderr_chunks: list[str] = []
        threading.Thread(target=self._drain_stdout, daemon=True).start()
        threading.Thread(target=self._drain_stderr, daemon=True).start()
        self._handshake(startup_timeout_s)

    def _drain_stdout(self):
        try:
            for line in self.proc.stdout:
                self._lines.put(line)
        except ValueError:
            pass
        self._lines.put(None)  # EOF sentinel

    def _drain_stderr(self):
        try:
            for line in self.proc.stderr:
                if len(self._stderr_chunks) < 200:
                    self._stderr_chunks.append(line)
        except ValueError:
            pass

    def stderr_text(self) -> str:
        return "".join(self._stderr_chunks)

    def _handshake(self, timeout_s: float):
        try:
            line = self._next_line(timeout_s)
        except _WorkerTimeout:
            self.kill()
            raise PoolStartupError(
                "worker did not handshake in time", worker_index=self.index, stderr=self.stderr_text()
            )
        if line is None:
            self.kill()
            raise PoolStartupError(
                "worker exited before handshake", worker_index=self.index, stderr=self.stderr_text()
            )
        try:
            hello = json.loads(line)
        except json.JSONDecodeError:
            self.kill()
            raise PoolStartupError(
                f"bad handshake line: {line!r}", worker_index=self.index, stderr=self.stderr_text()
            )
        if hello != EXPECTED_HANDSHAKE:
            self.kill()
            raise PoolStartupError(
                f"unexpected handshake: {hello!r}", worker_index=self.index, stderr=self.stderr_text()
            )

    def _next_line(self, timeout_s: float) -> str | None:
        try:
            return self._lines.get(timeout=timeout_s)
        except queue.Empty:
            raise _WorkerTimeout()

    def request(self, payload: dict, timeout_s: float) -> dict:
        line = json.dumps(payload, separators=(",", ":")) + "\n"
        try:
            self.proc.stdin.write(line)
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError):
            raise _WorkerCrashed()
        deadline = time.monotonic() + timeout_s
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise _WorkerTimeout()
            got = self._next_line(remaining)
            if got is None:
                raise _WorkerCrashed()
            try:
                msg = json.loads(got)
            except json.JSONDecodeError:
                continue  # stray output; keep waiting for the matching verdict
            if isinstance(msg, dict) and msg.get("request_id") == payload["request_id"]:
                return msg
            # Stale verdict from a timed-out predecessor: drop it.

    def kill(self):
        try:
            self.proc.kill()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            pass


def start_pool(config: RunnerPoolConfig) -> "WorkerPool":
    return WorkerPool(config)


class WorkerPool:
    """Thread-safe handle over `pool_size` workers; one in-flight request each."""

    def __init__(self, config: RunnerPoolConfig):
        if config.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        self.config = config
        self._idle: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._restarts_left = config.max_restarts
        self._live = 0
        self._closed = False
        started = []
        try:
            for i in range(config.pool_size):
                started.append(_Worker(i, config.runner_launch_command, config.startup_timeout_s))
        except PoolStartupError:
            for w in started:
                w.kill()
            raise
        for w in started:
            self._idle.put(w)
        self._live = len(started)
        self._next_index = config.pool_size

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        self._closed = True
        while True:
            try:
                worker = self._idle.get_nowait()
            except queue.Empty:
                break
            worker.kill()

    # -- request API ---------------------------------------------------------

    def run_function(self, source: str, name: str, args, timeout_ms: int | None = None) -> ExecVerdict:
        payload = {
            "request_id": uuid.uuid4().hex,
            "kind": "run_function",
            "function_source": source,
            "function_name": name,
            "args": list(args),
            "timeout_ms": timeout_ms or self.config.default_timeout_ms,
        }
        return self._submit(payload)

    def eval_assertion(
        self,
        function_source: str,
        function_name: str,
        assertion_source: str,
        args,
        return_value,
        timeout_ms: int | None = None,
    ) -> ExecVerdict:
        payload = {
            "request_id": uuid.uuid4().hex,
            "kind": "eval_assertion",
            "function_source": function_source,
            "function_name": function_name,
            "args": list(args),
            "assertion_source": assertion_source,
            "bound_output": return_value,
            "timeout_ms": timeout_ms or self.config.default_timeout_ms,
        }
        return self._submit(payload)

    # -- internals -----------------------------------------------------------

    def _checkout(self) -> _Worker:
        while True:
            if self._closed:
                raise InfrastructureError("worker pool is closed")
            with self._lock:
                if self._live == 0:
                    raise InfrastructureError("no live workers left (restart budget exhausted)")
            try:
                return self._idle.get(timeout=0.5)
            except queue.Empty:
                continue

    def _replace(self, worker: _Worker):
        worker.kill()
        with self._lock:
            self._live -= 1
            if self._restarts_left <= 0 or self._closed:
                return
            self._restarts_left -= 1
            index = self._next_index
            self._next_index += 1
        try:
            fresh = _Worker(index, self.config.runner_launch_command, self.config.startup_timeout_s)
        except PoolStartupError:
            return
        with self._lock:
            if self._closed:
                fresh.kill()
                return
            self._live += 1
        self._idle.put(fresh)

    def _submit(self, payload: dict) -> ExecVerdict:
        timeout_ms = payload["timeout_ms"]
        outer_timeout_s = 2.0 * timeout_ms / 1000.0
        worker = self._checkout()
        try:
            msg = worker.request(payload, outer_timeout_s)
        except _WorkerTimeout:
            self._replace(worker)
            return ExecVerdict(
                request_id=payload["request_id"],
                status="timeout",
                error_type="client_timeout",
                error_message=f"no verdict within {int(outer_timeout_s * 1000)} ms; worker replaced",
                duration_ms=int(outer_timeout_s * 1000),
            )
        except _WorkerCrashed:
            stderr = worker.stderr_text()
            self._replace(worker)
            return ExecVerdict(
                request_id=payload["request_id"],
                status="runtime_error",
                error_type="worker_crash",
                error_message=stderr.strip().splitlines()[-1] if stderr.strip() else "worker died mid-request",
            )
        if worker.proc.poll() is not None:
            # Worker answered, then exited on purpose (e.g. an evaluation that
            # resisted interruption): the verdict stands, the worker does not.
            self._replace(worker)
        else:
            self._idle.put(worker)
        return self._verdict_from_wire(msg, payload["request_id"])

    @staticmethod
    def _verdict_from_wire(msg: dict, request_id: str) -> ExecVerdict:
        status = msg.get("status")
        if status not in STATUSES:
            return ExecVerdict(
                request_id=request_id,
                status="runtime_error",
                error_type="protocol_error",
                error_message=f"worker sent unknown status {status!r}",
            )
        return ExecVerdict(
            request_id=request_id,
            status=status,
            value=msg.get("value"),
            error_type=msg.get("error_type", ""),
            error_message=msg.get("error_message", ""),
            duration_ms=int(msg.get("duration_ms", 0)),
        )
