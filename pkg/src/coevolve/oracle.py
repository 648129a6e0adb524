"""Sandboxed execution of generated programs against test cases.

Programs run as child processes in a throwaway working directory with a
scrubbed environment, a wall-clock timeout (process tree killed on expiry),
and capped output capture. Verdicts refine "output mismatch" into
operational classes; the all-pass predicate drives the solve loop.
"""

from __future__ import annotations

import os
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
import traceback
from dataclasses import dataclass
from enum import Enum
from typing import IO, Sequence

from .agents import Code
from .core import IoMode, TestCase, normalize_output

__all__ = [
    "Verdict",
    "CaseResult",
    "FailureLog",
    "ExecLimits",
    "ExecutionOracle",
    "SandboxSpawnFailure",
    "normalize_output",
    "format_failure_log",
]

STDERR_EXCERPT_CHARS = 2000
_STDERR_CAP_BYTES = 16384
_READ_CHUNK = 65536


class SandboxSpawnFailure(Exception):
    """The harness could not launch the child process (environment problem,
    distinct from any program verdict)."""


class Verdict(Enum):
    PASS = "Pass"
    WRONG_ANSWER = "WrongAnswer"
    RUNTIME_ERROR = "RuntimeError"
    TIMEOUT = "Timeout"
    COMPILE_ERROR = "CompileError"


@dataclass(frozen=True)
class ExecLimits:
    """Per-case wall-clock and stdout-capture limits."""

    timeout_seconds: float = 10.0
    max_output_bytes: int = 1 << 20


@dataclass(frozen=True)
class CaseResult:
    test: TestCase
    verdict: Verdict
    actual: str
    stderr_excerpt: str
    wall_time_ms: int


@dataclass(frozen=True)
class FailureLog:
    """Failing case results in execution order; empty exactly when all passed."""

    failing: tuple[CaseResult, ...]
    total_cases: int


def format_failure_log(log: FailureLog, cap: int) -> str:
    """Render a failure log to the prompt-facing text format.

    Header reports the full failure count; at most `cap` case blocks follow.
    The layout is a stable prompt contract.
    """
    if not log.failing:
        raise ValueError("failure log is empty")
    if cap < 1:
        raise ValueError("cap must be positive")
    blocks = [f"{len(log.failing)} of {log.total_cases} sample tests failed"]
    for k, case in enumerate(log.failing[:cap], start=1):
        lines = [
            f"### Test Case {k}",
            "Input:",
            case.test.input,
            "Expected Output:",
            case.test.expected,
            "Actual Output:",
            case.actual if case.actual else "(empty)",
            f"Verdict: {case.verdict.value}",
        ]
        if case.stderr_excerpt:
            lines.append("Stderr:")
            lines.append(case.stderr_excerpt)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


# Appended to a functional-mode program: calls the entry point on the
# deserialized argument tuple and prints a canonical, whitespace-free
# serialization of the result (see docs/data_formats.md).
_FUNCTIONAL_DRIVER = '''

def _canonical_literal(value):
    if value is None or isinstance(value, (bool, int, float, str, bytes)):
        return repr(value)
    if isinstance(value, list):
        return "[" + ",".join(_canonical_literal(v) for v in value) + "]"
    if isinstance(value, tuple):
        body = ",".join(_canonical_literal(v) for v in value)
        if len(value) == 1:
            body += ","
        return "(" + body + ")"
    if isinstance(value, dict):
        pairs = sorted((_canonical_literal(k), _canonical_literal(v)) for k, v in value.items())
        return "{" + ",".join(k + ":" + v for k, v in pairs) + "}"
    if isinstance(value, (set, frozenset)):
        members = sorted(_canonical_literal(v) for v in value)
        return "{" + ",".join(members) + "}" if members else "set()"
    return repr(value)


if __name__ == "__main__":
    import ast as _ast
    import sys as _sys

    _args = _ast.literal_eval(__ARGS_LITERAL__)
    if not isinstance(_args, tuple):
        _args = (_args,)
    _result = __ENTRY_POINT__(*_args)
    _sys.stdout.write(_canonical_literal(_result) + "\\n")
'''


def _functional_source(code_text: str, entry_point: str, input_literal: str) -> str:
    driver = _FUNCTIONAL_DRIVER.replace("__ARGS_LITERAL__", repr(input_literal))
    driver = driver.replace("__ENTRY_POINT__", entry_point)
    return code_text + "\n" + driver


def _drain(stream: IO[bytes], buffer: bytearray, cap: int) -> None:
    # Keep reading to EOF so the child never blocks on a full pipe; retain
    # only the first `cap` bytes.
    try:
        while True:
            chunk = stream.read(_READ_CHUNK)
            if not chunk:
                break
            if len(buffer) < cap:
                buffer.extend(chunk[: cap - len(buffer)])
    except (OSError, ValueError):
        pass
    finally:
        try:
            stream.close()
        except OSError:
            pass


def _feed(stream: IO[bytes], payload: bytes) -> None:
    try:
        stream.write(payload)
        stream.flush()
    except (BrokenPipeError, OSError):
        pass
    finally:
        try:
            stream.close()
        except (BrokenPipeError, OSError):
            pass


@dataclass(frozen=True)
class _ChildOutcome:
    returncode: int
    timed_out: bool
    stdout: bytes
    stderr: bytes
    wall_time_ms: int


def _run_child(
    cmd: Sequence[str],
    stdin_text: str,
    limits: ExecLimits,
    cwd: str,
) -> _ChildOutcome:
    env = {
        "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
        "HOME": cwd,
        "TMPDIR": cwd,
        "LANG": "C.UTF-8",
        "PYTHONDONTWRITEBYTECODE": "1",
        "PYTHONIOENCODING": "utf-8",
    }
    started = time.monotonic()
    try:
        proc = subprocess.Popen(
            list(cmd),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            cwd=cwd,
            env=env,
            start_new_session=True,
        )
    except OSError as exc:
        raise SandboxSpawnFailure(f"could not launch {cmd[0]!r}: {exc}") from exc

    out_buf, err_buf = bytearray(), bytearray()
    assert proc.stdin and proc.stdout and proc.stderr
    workers = [
        threading.Thread(target=_feed, args=(proc.stdin, stdin_text.encode("utf-8"))),
        threading.Thread(target=_drain, args=(proc.stdout, out_buf, limits.max_output_bytes)),
        threading.Thread(target=_drain, args=(proc.stderr, err_buf, _STDERR_CAP_BYTES)),
    ]
    for worker in workers:
        worker.start()
    timed_out = False
    try:
        returncode = proc.wait(timeout=limits.timeout_seconds)
    except subprocess.TimeoutExpired:
        timed_out = True
        try:
            os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()
        returncode = proc.wait()
    for worker in workers:
        worker.join(timeout=10.0)
    wall_time_ms = int((time.monotonic() - started) * 1000)
    return _ChildOutcome(returncode, timed_out, bytes(out_buf), bytes(err_buf), wall_time_ms)


class ExecutionOracle:
    """Runs generated programs against test cases and classifies verdicts.

    The interpreter command is a template whose "{src}" element is replaced
    by the source-file path; the default invokes the running Python on the
    file. With compile_check enabled (sensible for Python interpreters only)
    the source is compiled in-harness first, so syntax errors classify as
    CompileError without spawning a process.
    """

    def __init__(
        self,
        interpreter: Sequence[str] | None = None,
        *,
        compile_check: bool = True,
    ):
        self._interpreter = tuple(interpreter) if interpreter else (sys.executable, "{src}")
        self._compile_check = compile_check

    def _command(self, src_path: str) -> list[str]:
        cmd = [arg.replace("{src}", src_path) for arg in self._interpreter]
        if "{src}" not in self._interpreter:
            cmd.append(src_path)
        return cmd

    def run_case(
        self,
        code: Code,
        test: TestCase,
        io_mode: IoMode,
        limits: ExecLimits,
        *,
        entry_point: str | None = None,
    ) -> CaseResult:
        """Execute one test case and classify the outcome."""
        if io_mode is IoMode.FUNCTIONAL:
            if not entry_point:
                raise ValueError("functional execution requires an entry_point")
            source = _functional_source(code.text, entry_point, test.input)
            stdin_text = ""
        else:
            source = code.text
            stdin_text = test.input

        if self._compile_check:
            started = time.monotonic()
            try:
                compile(source, "solution.py", "exec")
            except (SyntaxError, ValueError) as exc:
                stderr = "".join(traceback.format_exception_only(type(exc), exc)).strip()
                return CaseResult(
                    test=test,
                    verdict=Verdict.COMPILE_ERROR,
                    actual="",
                    stderr_excerpt=stderr[:STDERR_EXCERPT_CHARS],
                    wall_time_ms=int((time.monotonic() - started) * 1000),
                )

        workdir = tempfile.mkdtemp(prefix="coevolve-run-")
        try:
            src_path = os.path.join(workdir, "solution.py")
            with open(src_path, "w", encoding="utf-8") as fh:
                fh.write(source)
            outcome = _run_child(self._command(src_path), stdin_text, limits, workdir)
        finally:
            shutil.rmtree(workdir, ignore_errors=True)

        actual = normalize_output(outcome.stdout.decode("utf-8", "replace"))
        stderr_excerpt = outcome.stderr.decode("utf-8", "replace")[:STDERR_EXCERPT_CHARS]
        if outcome.timed_out:
            verdict = Verdict.TIMEOUT
        elif outcome.returncode != 0:
            verdict = Verdict.RUNTIME_ERROR
        elif actual == test.expected:
            verdict = Verdict.PASS
        else:
            verdict = Verdict.WRONG_ANSWER
        return CaseResult(test, verdict, actual, stderr_excerpt, outcome.wall_time_ms)

    def evaluate(
        self,
        code: Code,
        tests: Sequence[TestCase],
        io_mode: IoMode,
        limits: ExecLimits,
        *,
        entry_point: str | None = None,
    ) -> tuple[bool, FailureLog]:
        """Run every test (no short-circuit) and return the all-pass flag
        plus the failure log."""
        if not tests:
            raise ValueError("evaluate requires a nonempty test list")
        failing = []
        for test in tests:
            result = self.run_case(code, test, io_mode, limits, entry_point=entry_point)
            if result.verdict is not Verdict.PASS:
                failing.append(result)
        return (not failing), FailureLog(tuple(failing), len(tests))
