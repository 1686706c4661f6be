"""Bundled protocol-conformant runner.

The production worker ships as a separate package; this stub speaks the same
newline-delimited JSON protocol so the harness and its test suite work without
it. Each request executes in a fresh namespace under an alarm-based timeout,
with user code's stdio detached from the protocol streams.

Run with: python -m specharness.stubrunner
"""

from __future__ import annotations

import inspect
import io
import json
import signal
import sys
import time

PROTO_VERSION = 1
HANDSHAKE_LINE = '{"hello":"specharness-runner","proto":1}'


class _TimeLimitExceeded(Exception):
    pass


def _on_alarm(signum, frame):
    raise _TimeLimitExceeded()


def _install_alarm_handler():
    if hasattr(signal, "SIGALRM"):
        signal.signal(signal.SIGALRM, _on_alarm)


class _time_limit:
    def __init__(self, timeout_ms: int):
        self.seconds = max(timeout_ms, 1) / 1000.0

    def __enter__(self):
        if hasattr(signal, "setitimer"):
            signal.setitimer(signal.ITIMER_REAL, self.seconds)

    def __exit__(self, *exc):
        if hasattr(signal, "setitimer"):
            signal.setitimer(signal.ITIMER_REAL, 0)


class _detached_stdio:
    """Point user code's stdio away from the protocol streams."""

    def __enter__(self):
        self._saved = sys.stdin, sys.stdout, sys.stderr
        sys.stdin = io.StringIO("")
        sys.stdout = io.StringIO()
        sys.stderr = io.StringIO()

    def __exit__(self, *exc):
        sys.stdin, sys.stdout, sys.stderr = self._saved


def _positional_binding(fn, args) -> dict:
    params = list(inspect.signature(fn).parameters.values())
    names = [p.name for p in params if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)]
    binding = dict(zip(names, args))
    var = next((p.name for p in params if p.kind == p.VAR_POSITIONAL), None)
    if var is not None and len(args) > len(names):
        binding[var] = list(args[len(names):])
    return binding


def _classify(exc: BaseException) -> tuple[str, str, str]:
    if isinstance(exc, AssertionError):
        return "assert_fail", "AssertionError", str(exc)
    if isinstance(exc, SyntaxError):
        return "syntax_error", "SyntaxError", exc.msg or str(exc)
    if isinstance(exc, _TimeLimitExceeded):
        return "timeout", "timeout", "execution exceeded the time limit"
    return "runtime_error", type(exc).__name__, str(exc)


def handle_request(req: dict) -> dict:
    started = time.perf_counter()
    request_id = req.get("request_id", "") if isinstance(req, dict) else ""

    def verdict(status, value_present=False, value=None, error_type="", error_message=""):
        out = {
            "request_id": request_id,
            "status": status,
            "error_type": error_type,
            "error_message": error_message,
            "duration_ms": int((time.perf_counter() - started) * 1000),
        }
        if value_present:
            out["value"] = value
        return out

    kind = req.get("kind")
    if kind not in ("run_function", "eval_assertion"):
        return verdict("runtime_error", error_type="protocol_error", error_message=f"unknown kind {kind!r}")
    function_source = req.get("function_source", "")
    function_name = req.get("function_name", "")
    args = req.get("args", [])
    timeout_ms = int(req.get("timeout_ms", 1000))

    namespace: dict = {}
    try:
        if function_source:
            exec(compile(function_source, "<function>", "exec"), namespace)
    except BaseException as exc:
        status, etype, msg = _classify(exc)
        return verdict(status, error_type=etype, error_message=msg)

    if kind == "run_function":
        fn = namespace.get(function_name)
        if not callable(fn):
            return verdict(
                "runtime_error",
                error_type="NameError",
                error_message=f"function {function_name!r} not defined by the source",
            )
        try:
            with _detached_stdio(), _time_limit(timeout_ms):
                value = fn(*args)
        except BaseException as exc:
            status, etype, msg = _classify(exc)
            return verdict(status, error_type=etype, error_message=msg)
        try:
            value = json.loads(json.dumps(value))
        except (TypeError, ValueError):
            return verdict(
                "unserializable_output",
                error_type="unserializable_output",
                error_message=f"return value of type {type(value).__name__} does not round-trip through JSON",
            )
        return verdict("ok", value_present=True, value=value)

    # eval_assertion: bind each positional parameter name to its test-input
    # value plus return_value, with the original function loaded as a helper.
    fn = namespace.get(function_name)
    if callable(fn):
        try:
            namespace.update(_positional_binding(fn, args))
        except (TypeError, ValueError) as exc:
            return verdict("runtime_error", error_type=type(exc).__name__, error_message=str(exc))
    namespace["return_value"] = req.get("bound_output")
    try:
        code = compile(req.get("assertion_source", ""), "<assertion>", "exec")
    except SyntaxError as exc:
        return verdict("syntax_error", error_type="SyntaxError", error_message=exc.msg or str(exc))
    try:
        with _detached_stdio(), _time_limit(timeout_ms):
            exec(code, namespace)
    except BaseException as exc:
        status, etype, msg = _classify(exc)
        return verdict(status, error_type=etype, error_message=msg)
    return verdict("ok")


def serve_loop(stdin, stdout) -> None:
    _install_alarm_handler()
    stdout.write(HANDSHAKE_LINE + "\n")
    stdout.flush()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                raise ValueError("request must be an object")
        except (json.JSONDecodeError, ValueError) as exc:
            out = {
                "request_id": "",
                "status": "runtime_error",
                "error_type": "protocol_error",
                "error_message": f"unparseable request line: {exc}",
                "duration_ms": 0,
            }
            stdout.write(json.dumps(out, separators=(",", ":")) + "\n")
            stdout.flush()
            continue
        out = handle_request(req)
        stdout.write(json.dumps(out, separators=(",", ":")) + "\n")
        stdout.flush()


def main() -> None:
    serve_loop(sys.stdin, sys.stdout)


if __name__ == "__main__":
    main()
