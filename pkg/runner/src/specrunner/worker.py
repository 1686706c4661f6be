"""Sandboxed execution worker.

Speaks newline-delimited JSON on stdin/stdout: a handshake line on start, then
exactly one verdict line per request line, matched by request_id. Two request
kinds exist. `run_function` compiles the given source into a fresh namespace
and calls the named function on positional JSON arguments; the return value
must round-trip through JSON. `eval_assertion` additionally binds each of the
function's positional parameter names to the corresponding argument plus
`return_value` to the bound output, loads the function itself as a callable
helper, and executes the assertion block (which may hold several statements
and imports).

Hardening over a plain exec loop:

- Every request runs in a brand-new namespace; nothing defined by one request
  is visible to the next.
- A recurring interval timer aborts overlong evaluations from inside the
  worker. The first fires raise; if user code swallows the raise (bare except
  or `except BaseException`), the handler gives up once the deadline is well
  past, emits the timeout verdict itself, and exits, so the worker never
  hangs while signals are deliverable.
- File descriptors 0 and 1 are claimed for the protocol before any user code
  runs: user reads see an empty stream and user writes land in /dev/null, even
  through os-level access. Worker logs go to stderr only.
- Address-space and recursion limits are raised to generous fixed defaults;
  exceeding them classifies as runtime_error, never kills the loop.

Limits of the internal watchdog: code that blocks signal delivery entirely is
not abortable from inside the process. Uninterruptible native calls are the
classic case; on CPython 3.10 a tight `while True: try/except` loop also
starves the eval breaker, so the Python-level handler never runs. The pool
client's outer bound (kill and replace at twice the timeout) covers that
class; the layers are complementary by design.

Runs standalone with no arguments: `specharness-runner` or
`python -m specrunner`.
"""

from __future__ import annotations

import inspect
import json
import os
import signal
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass

PROTO_VERSION = 1
HANDSHAKE_LINE = '{"hello":"specharness-runner","proto":1}'

MEMORY_LIMIT_BYTES = 4 * 1024**3
RECURSION_LIMIT = 10_000
# Re-raise cadence while a timed-out evaluation refuses to die.
WATCHDOG_INTERVAL_S = 0.05

VALID_KINDS = ("run_function", "eval_assertion")


class TimeLimitExceeded(BaseException):
    """BaseException so `except Exception` in user code cannot swallow it."""


@dataclass
class WorkerState:
    proto_version: int = PROTO_VERSION
    requests_served: int = 0


@dataclass
class _ActiveRequest:
    request_id: str
    deadline: float
    give_up_at: float
    protocol_out: object = None


# Set while user code runs; the alarm handler reads it.
_active: _ActiveRequest | None = None
# The stream verdicts are written to; main() rebinds it after claiming stdio.
_protocol_out = sys.stdout


def _on_alarm(signum, frame):
    active = _active
    if active is not None and time.monotonic() >= active.give_up_at:
        # The evaluation swallowed earlier raises. Report the timeout verdict
        # directly and stop existing; the pool replaces sacrificed workers.
        out = {
            "request_id": active.request_id,
            "status": "timeout",
            "error_type": "timeout",
            "error_message": "execution exceeded the time limit and resisted interruption",
            "duration_ms": int((time.monotonic() - active.deadline) * 1000),
        }
        stream = active.protocol_out or _protocol_out
        try:
            stream.write(json.dumps(out, separators=(",", ":")) + "\n")
            stream.flush()
            sys.stderr.write("specrunner: evaluation resisted interruption; exiting\n")
            sys.stderr.flush()
        finally:
            os._exit(70)
    raise TimeLimitExceeded()


@contextmanager
def time_limit(timeout_ms: int, request_id: str = ""):
    global _active
    if not hasattr(signal, "setitimer"):
        yield
        return
    seconds = max(int(timeout_ms), 1) / 1000.0
    grace = max(0.25, 0.5 * seconds)
    now = time.monotonic()
    _active = _ActiveRequest(
        request_id=request_id,
        deadline=now + seconds,
        give_up_at=now + seconds + grace,
        protocol_out=_protocol_out,
    )
    signal.setitimer(signal.ITIMER_REAL, seconds, WATCHDOG_INTERVAL_S)
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        _active = None


def apply_resource_limits() -> None:
    """Generous fixed ceilings; hitting one classifies as runtime_error."""
    sys.setrecursionlimit(RECURSION_LIMIT)
    try:
        import resource

        soft, hard = resource.getrlimit(resource.RLIMIT_AS)
        ceiling = MEMORY_LIMIT_BYTES if hard == resource.RLIM_INFINITY else min(MEMORY_LIMIT_BYTES, hard)
        resource.setrlimit(resource.RLIMIT_AS, (ceiling, hard))
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))
    except (ImportError, ValueError, OSError):
        pass


def classify_exception(exc: BaseException) -> tuple[str, str, str]:
    """Total mapping from a raised exception to (status, error_type, message)."""
    try:
        message = str(exc)
    except BaseException:
        message = "<unprintable exception>"
    if isinstance(exc, AssertionError):
        return "assert_fail", "AssertionError", message
    if isinstance(exc, SyntaxError):
        return "syntax_error", "SyntaxError", exc.msg or message
    if isinstance(exc, TimeLimitExceeded):
        return "timeout", "timeout", "execution exceeded the time limit"
    return "runtime_error", type(exc).__name__, message


def _positional_binding(fn, args) -> dict:
    params = list(inspect.signature(fn).parameters.values())
    names = [p.name for p in params if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)]
    binding = dict(zip(names, args))
    var = next((p.name for p in params if p.kind == p.VAR_POSITIONAL), None)
    if var is not None and len(args) > len(names):
        binding[var] = list(args[len(names):])
    return binding


def _protocol_error(request_id: str, message: str) -> dict:
    return {
        "request_id": request_id,
        "status": "runtime_error",
        "error_type": "protocol_error",
        "error_message": message,
        "duration_ms": 0,
    }


def handle_request(req: dict) -> dict:
    started = time.perf_counter()
    request_id = req.get("request_id")
    if not isinstance(request_id, str):
        return _protocol_error("", "request_id missing or not a string")

    def verdict(status, *, value_present=False, value=None, error_type="", error_message=""):
        return {
            "request_id": request_id,
            "status": status,
            "error_type": error_type,
            "error_message": error_message,
            "duration_ms": int((time.perf_counter() - started) * 1000),
        } | ({"value": value} if value_present else {})

    kind = req.get("kind")
    if kind not in VALID_KINDS:
        return _protocol_error(request_id, f"unknown kind {kind!r}")
    function_source = req.get("function_source", "")
    function_name = req.get("function_name", "")
    args = req.get("args", [])
    if not isinstance(function_source, str) or not isinstance(function_name, str):
        return _protocol_error(request_id, "function_source/function_name must be strings")
    if not isinstance(args, list):
        return _protocol_error(request_id, "args must be a list")
    try:
        timeout_ms = int(req.get("timeout_ms", 1000))
    except (TypeError, ValueError):
        return _protocol_error(request_id, "timeout_ms must be an integer")

    namespace: dict = {}
    if function_source:
        try:
            exec(compile(function_source, "<function>", "exec"), namespace)
        except BaseException as exc:
            status, error_type, message = classify_exception(exc)
            return verdict(status, error_type=error_type, error_message=message)

    if kind == "run_function":
        fn = namespace.get(function_name)
        if not callable(fn):
            return verdict(
                "runtime_error",
                error_type="NameError",
                error_message=f"function {function_name!r} not defined by the source",
            )
        try:
            with time_limit(timeout_ms, request_id):
                value = fn(*args)
        except BaseException as exc:
            status, error_type, message = classify_exception(exc)
            return verdict(status, error_type=error_type, error_message=message)
        try:
            value = json.loads(json.dumps(value))
        except (TypeError, ValueError):
            return verdict(
                "unserializable_output",
                error_type="unserializable_output",
                error_message=f"return value of type {type(value).__name__} does not round-trip through JSON",
            )
        return verdict("ok", value_present=True, value=value)

    assertion_source = req.get("assertion_source", "")
    if not isinstance(assertion_source, str):
        return _protocol_error(request_id, "assertion_source must be a string")
    fn = namespace.get(function_name)
    if callable(fn):
        try:
            namespace.update(_positional_binding(fn, args))
        except (TypeError, ValueError) as exc:
            status, error_type, message = classify_exception(exc)
            return verdict(status, error_type=error_type, error_message=message)
    namespace["return_value"] = req.get("bound_output")
    try:
        code = compile(assertion_source, "<assertion>", "exec")
    except SyntaxError as exc:
        return verdict("syntax_error", error_type="SyntaxError", error_message=exc.msg or str(exc))
    try:
        with time_limit(timeout_ms, request_id):
            exec(code, namespace)
    except BaseException as exc:
        status, error_type, message = classify_exception(exc)
        return verdict(status, error_type=error_type, error_message=message)
    return verdict("ok")


def serve_loop(stdin, stdout) -> None:
    """Handshake, then one verdict line per request line, until EOF."""
    global _protocol_out
    _protocol_out = stdout
    state = WorkerState()
    stdout.write(HANDSHAKE_LINE + "\n")
    stdout.flush()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                raise ValueError("request must be a JSON object")
        except (json.JSONDecodeError, ValueError) as exc:
            out = _protocol_error("", f"unparseable request line: {exc}")
            print(f"specrunner: protocol error: {exc}", file=sys.stderr)
            stdout.write(json.dumps(out, separators=(",", ":")) + "\n")
            stdout.flush()
            continue
        out = handle_request(req)
        state.requests_served += 1
        stdout.write(json.dumps(out, separators=(",", ":")) + "\n")
        stdout.flush()


def _claim_stdio():
    """Move the protocol onto private descriptors so user code cannot reach it.

    After this, fd 0 reads empty and fd 1 writes to /dev/null; only the worker
    holds the real pipe ends.
    """
    protocol_in = os.fdopen(os.dup(0), "r", encoding="utf-8")
    protocol_out = os.fdopen(os.dup(1), "w", encoding="utf-8")
    devnull = os.open(os.devnull, os.O_RDWR)
    os.dup2(devnull, 0)
    os.dup2(devnull, 1)
    os.close(devnull)
    return protocol_in, protocol_out


def main() -> None:
    protocol_in, protocol_out = _claim_stdio()
    apply_resource_limits()
    if hasattr(signal, "SIGALRM"):
        signal.signal(signal.SIGALRM, _on_alarm)
    serve_loop(protocol_in, protocol_out)


if __name__ == "__main__":
    main()
