"""Shared domain types, validation, and the configuration model.

Everything here is an immutable value after construction and safe to share
across concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

WEIGHT_SUM_TOLERANCE = 1e-9


class WeightError(ValueError):
    """Invalid trust-weight triple."""


class NegativeWeight(WeightError):
    """A trust weight is below zero."""


class SumNotOne(WeightError):
    """Trust weights do not sum to one within tolerance."""


class ProblemValidationError(ValueError):
    """A raw problem record violates the schema or an invariant."""

    def __init__(self, message: str, field_name: str | None = None):
        super().__init__(message)
        self.field_name = field_name


class MissingField(ProblemValidationError):
    """A required field is absent, empty, or of the wrong type."""


class EmptySampleTests(ProblemValidationError):
    """sample_tests is empty; the all-pass predicate would be undefined."""


class EntryPointMismatch(ProblemValidationError):
    """entry_point presence does not match the I/O mode."""


class IterationBudgetZero(ValueError):
    """max_iterations must be at least one."""


class IoMode(Enum):
    """How a generated program is exercised by the execution oracle."""

    FUNCTIONAL = "functional"
    STDIO = "stdio"


class Decision(Enum):
    """Binary refinement decision: revise the plan or patch the code.

    UPDATE_PLAN encodes the 0 branch, UPDATE_CODE the 1 branch.
    """

    UPDATE_PLAN = "update_plan"
    UPDATE_CODE = "update_code"


def normalize_output(raw: str) -> str:
    """Canonicalize program output for comparison.

    Line endings become "\\n", each line is right-trimmed, and trailing
    blank lines are removed. Idempotent.
    """
    text = raw.replace("\r\n", "\n").replace("\r", "\n")
    lines = [line.rstrip() for line in text.split("\n")]
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)


@dataclass(frozen=True)
class TestCase:
    """One I/O example: a stdin payload (stdio) or a serialized argument
    tuple (functional), with the expected output in canonical normalized
    form (a fixed point of normalize_output)."""

    input: str
    expected: str


@dataclass(frozen=True)
class TrustWeights:
    """Fixed per-analysis reliability coefficients for decision aggregation.

    Nonnegative and summing to one within WEIGHT_SUM_TOLERANCE; violations
    are rejected, never silently renormalized.
    """

    w_plan: float
    w_code: float
    w_align: float

    def __post_init__(self) -> None:
        values = (self.w_plan, self.w_code, self.w_align)
        for v in values:
            if not math.isfinite(v):
                raise WeightError(f"trust weight must be finite, got {v!r}")
            if v < 0:
                raise NegativeWeight(f"trust weight must be nonnegative, got {v!r}")
        total = sum(values)
        if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise SumNotOne(f"trust weights must sum to 1, got {total!r}")


def make_trust_weights(w_plan: float, w_code: float, w_align: float) -> TrustWeights:
    """Validate and construct a TrustWeights triple."""
    return TrustWeights(w_plan, w_code, w_align)


DEFAULT_TRUST_WEIGHTS = TrustWeights(0.4, 0.3, 0.3)


@dataclass(frozen=True)
class PipelineConfig:
    """Run-level knobs for the solve loop.

    decoding is an opaque map forwarded verbatim to the backend; sampling
    parameters are deliberately not hard-coded here.
    """

    max_iterations: int = 5
    weights: TrustWeights = DEFAULT_TRUST_WEIGHTS
    timeout_seconds: float = 10.0
    max_output_bytes: int = 1 << 20
    failure_log_case_cap: int = 5
    decoding: Mapping[str, Any] = field(default_factory=dict)
    language: str = "Python 3"
    strategy_char_cap: int = 8000

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise IterationBudgetZero(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )
        if not self.timeout_seconds > 0:
            raise ValueError(f"timeout_seconds must be > 0, got {self.timeout_seconds}")
        if self.max_output_bytes < 1:
            raise ValueError(
                f"max_output_bytes must be positive, got {self.max_output_bytes}"
            )
        if self.failure_log_case_cap < 1:
            raise ValueError(
                f"failure_log_case_cap must be positive, got {self.failure_log_case_cap}"
            )


@dataclass(frozen=True)
class LedgerEntry:
    role: str
    tokens_in: int
    tokens_out: int


class UsageLedger:
    """Ordered token/call accounting for one run.

    Token counts come from the producing backend and are never re-estimated
    here; api_calls always equals the number of recorded entries.
    """

    def __init__(self) -> None:
        self._entries: list[LedgerEntry] = []

    def record(self, role: str, tokens_in: int, tokens_out: int) -> None:
        if tokens_in < 0 or tokens_out < 0:
            raise ValueError("token counts must be nonnegative")
        self._entries.append(LedgerEntry(role, tokens_in, tokens_out))

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    @property
    def api_calls(self) -> int:
        return len(self._entries)

    @property
    def tokens_in_total(self) -> int:
        return sum(e.tokens_in for e in self._entries)

    @property
    def tokens_out_total(self) -> int:
        return sum(e.tokens_out for e in self._entries)

    def to_dict(self) -> dict[str, Any]:
        return {
            "api_calls": self.api_calls,
            "tokens_in": self.tokens_in_total,
            "tokens_out": self.tokens_out_total,
            "entries": [
                {"role": e.role, "tokens_in": e.tokens_in, "tokens_out": e.tokens_out}
                for e in self._entries
            ],
        }


@dataclass(frozen=True)
class Problem:
    """One coding task: description, coding template, I/O mode, and its
    visible (sample) and final (hidden) test suites."""

    id: str
    description: str
    template: str
    io_mode: IoMode
    entry_point: str | None
    sample_tests: tuple[TestCase, ...]
    hidden_tests: tuple[TestCase, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "id": self.id,
            "description": self.description,
            "io_mode": self.io_mode.value,
            "template": self.template,
            "sample_tests": [
                {"input": t.input, "expected": t.expected} for t in self.sample_tests
            ],
            "hidden_tests": [
                {"input": t.input, "expected": t.expected} for t in self.hidden_tests
            ],
        }
        if self.entry_point is not None:
            record["entry_point"] = self.entry_point
        return record


def _require_str(raw: Mapping[str, Any], key: str, *, nonempty: bool = True) -> str:
    value = raw.get(key)
    if not isinstance(value, str) or (nonempty and not value):
        raise MissingField(f"field {key!r} must be a nonempty string", key)
    return value


def _parse_tests(raw: Mapping[str, Any], key: str) -> tuple[TestCase, ...]:
    value = raw.get(key, [])
    if not isinstance(value, list):
        raise MissingField(f"field {key!r} must be a list of test cases", key)
    tests = []
    for i, item in enumerate(value):
        if not isinstance(item, Mapping):
            raise MissingField(f"{key}[{i}] must be an object", key)
        if not isinstance(item.get("input"), str):
            raise MissingField(f"{key}[{i}].input must be a string", key)
        if not isinstance(item.get("expected"), str):
            raise MissingField(f"{key}[{i}].expected must be a string", key)
        # Stored pre-normalized so runtime comparison is plain string equality.
        tests.append(TestCase(item["input"], normalize_output(item["expected"])))
    return tuple(tests)


def validate_problem(raw: Mapping[str, Any]) -> Problem:
    """Validate a raw problem record (one parsed dataset line) into a Problem.

    Idempotent: validating a valid Problem's to_dict() yields an equal Problem.
    """
    if not isinstance(raw, Mapping):
        raise MissingField("problem record must be an object")
    problem_id = _require_str(raw, "id")
    description = _require_str(raw, "description")
    mode_raw = _require_str(raw, "io_mode")
    try:
        io_mode = IoMode(mode_raw)
    except ValueError:
        raise MissingField(
            f"io_mode must be 'functional' or 'stdio', got {mode_raw!r}", "io_mode"
        ) from None

    template = raw.get("template", "")
    if not isinstance(template, str):
        raise MissingField("field 'template' must be a string", "template")

    entry_point = raw.get("entry_point")
    if entry_point is not None and not isinstance(entry_point, str):
        raise MissingField("field 'entry_point' must be a string", "entry_point")
    if io_mode is IoMode.FUNCTIONAL:
        if not entry_point:
            raise EntryPointMismatch(
                "functional problems require an entry_point", "entry_point"
            )
        if not entry_point.isidentifier():
            raise EntryPointMismatch(
                f"entry_point must be a valid identifier, got {entry_point!r}",
                "entry_point",
            )
    elif entry_point:
        raise EntryPointMismatch(
            "stdio problems must not define an entry_point", "entry_point"
        )

    if "sample_tests" not in raw:
        raise MissingField("field 'sample_tests' is required", "sample_tests")
    sample_tests = _parse_tests(raw, "sample_tests")
    if not sample_tests:
        raise EmptySampleTests("sample_tests must be nonempty", "sample_tests")
    hidden_tests = _parse_tests(raw, "hidden_tests")

    return Problem(
        id=problem_id,
        description=description,
        template=template,
        io_mode=io_mode,
        entry_point=entry_point if io_mode is IoMode.FUNCTIONAL else None,
        sample_tests=sample_tests,
        hidden_tests=hidden_tests,
    )
