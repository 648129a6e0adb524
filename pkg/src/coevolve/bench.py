"""Dataset loading, concurrent benchmark execution, and the metric suite:
solve rate on hidden tests, token I/O averages, API-call averages, and
plan/code update rates.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

from .backend import Backend
from .core import PipelineConfig, Problem, ProblemValidationError, validate_problem
from .oracle import ExecutionOracle
from .pipeline import RunRecord, solve
from .templates import DEFAULT_REGISTRY, TemplateRegistry

logger = logging.getLogger(__name__)


class DatasetError(Exception):
    """Base class for dataset-file failures; carries the offending line."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class ParseError(DatasetError):
    """A dataset line is not valid JSON."""


class ValidationError(DatasetError):
    """A dataset line parsed but failed problem validation."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        super().__init__(message, line)
        self.field = field


class DuplicateId(DatasetError):
    """Two problems share an id."""


class EmptyDataset(DatasetError):
    """The dataset file contains no problems."""


class EmptyRecords(ValueError):
    """A metric was requested over zero run records."""


@dataclass(frozen=True)
class Dataset:
    name: str
    problems: tuple[Problem, ...]


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            yield lineno, line


def load_dataset(path: str | Path) -> Dataset:
    """Load a JSON-Lines dataset, all-or-nothing.

    Every line must parse and validate; the first failure raises with its
    line number. Problem ids must be unique.
    """
    problems: list[Problem] = []
    seen: dict[str, int] = {}
    for lineno, line in _iter_jsonl(path):
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: invalid JSON: {exc}", lineno) from None
        try:
            problem = validate_problem(raw)
        except ProblemValidationError as exc:
            raise ValidationError(
                f"line {lineno}: {exc}", lineno, exc.field_name
            ) from None
        if problem.id in seen:
            raise DuplicateId(
                f"line {lineno}: id {problem.id!r} already used on line {seen[problem.id]}",
                lineno,
            )
        seen[problem.id] = lineno
        problems.append(problem)
    if not problems:
        raise EmptyDataset("dataset contains no problems")
    return Dataset(name=Path(path).stem, problems=tuple(problems))


def iter_dataset_diagnostics(path: str | Path) -> list[tuple[int, str]]:
    """Scan the whole file and report every invalid line (for validation UX;
    load_dataset itself stops at the first failure)."""
    diagnostics: list[tuple[int, str]] = []
    seen: dict[str, int] = {}
    count = 0
    for lineno, line in _iter_jsonl(path):
        count += 1
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            diagnostics.append((lineno, f"invalid JSON: {exc}"))
            continue
        try:
            problem = validate_problem(raw)
        except ProblemValidationError as exc:
            diagnostics.append((lineno, str(exc)))
            continue
        if problem.id in seen:
            diagnostics.append(
                (lineno, f"duplicate id {problem.id!r} (first used on line {seen[problem.id]})")
            )
        else:
            seen[problem.id] = lineno
    if count == 0:
        diagnostics.append((0, "dataset contains no problems"))
    return diagnostics


def run_benchmark(
    dataset: Dataset,
    config: PipelineConfig,
    backend: Backend,
    oracle: ExecutionOracle,
    jobs: int = 1,
    *,
    templates: TemplateRegistry = DEFAULT_REGISTRY,
) -> list[RunRecord]:
    """Solve every problem with at most `jobs` concurrent runs.

    Output order matches dataset order regardless of completion order;
    individual run failures become aborted records, never exceptions.
    """
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")

    def run_one(problem: Problem) -> RunRecord:
        try:
            return solve(problem, config, backend, oracle, templates=templates)
        except Exception as exc:  # solve() handles known failures; this is a net
            logger.exception("problem %s: unexpected failure", problem.id)
            from .core import UsageLedger

            return RunRecord(
                problem_id=problem.id,
                iterations=(),
                final_code=None,
                solved_on_samples=False,
                solved_on_hidden=False,
                plan_updates=0,
                code_updates=0,
                ledger=UsageLedger(),
                aborted=True,
                abort_reason=f"{type(exc).__name__}: {exc}",
            )

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run_one, problem) for problem in dataset.problems]
        return [future.result() for future in futures]


def pass_at_1(records: Sequence[RunRecord]) -> float:
    """Fraction of records whose final program passed every hidden test."""
    if not records:
        raise EmptyRecords("pass_at_1 requires at least one record")
    return sum(1 for r in records if r.solved_on_hidden) / len(records)


def update_rates(records: Sequence[RunRecord]) -> tuple[float, float]:
    """Plan/code update rates: each count normalized by
    (plan updates + code updates + number of records)."""
    if not records:
        raise EmptyRecords("update_rates requires at least one record")
    pu = sum(r.plan_updates for r in records)
    cu = sum(r.code_updates for r in records)
    denominator = pu + cu + len(records)
    return pu / denominator, cu / denominator


def token_io(records: Sequence[RunRecord]) -> tuple[float, float]:
    """Average input/output tokens per record, summed over every call the
    record made."""
    if not records:
        raise EmptyRecords("token_io requires at least one record")
    total_in = sum(r.ledger.tokens_in_total for r in records)
    total_out = sum(r.ledger.tokens_out_total for r in records)
    return total_in / len(records), total_out / len(records)


def api_calls_avg(records: Sequence[RunRecord]) -> float:
    """Mean number of backend calls per record."""
    if not records:
        raise EmptyRecords("api_calls_avg requires at least one record")
    return sum(r.ledger.api_calls for r in records) / len(records)


@dataclass(frozen=True)
class ProblemSummary:
    """Per-problem slice of a metrics report (no wall-clock data, so reports
    are byte-stable across runs and concurrency levels)."""

    id: str
    solved_on_samples: bool
    solved_on_hidden: bool
    aborted: bool
    iterations: int
    plan_updates: int
    code_updates: int
    api_calls: int
    tokens_in: int
    tokens_out: int

    @classmethod
    def from_record(cls, record: RunRecord) -> "ProblemSummary":
        return cls(
            id=record.problem_id,
            solved_on_samples=record.solved_on_samples,
            solved_on_hidden=record.solved_on_hidden,
            aborted=record.aborted,
            iterations=len(record.iterations),
            plan_updates=record.plan_updates,
            code_updates=record.code_updates,
            api_calls=record.ledger.api_calls,
            tokens_in=record.ledger.tokens_in_total,
            tokens_out=record.ledger.tokens_out_total,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "solved_on_samples": self.solved_on_samples,
            "solved_on_hidden": self.solved_on_hidden,
            "aborted": self.aborted,
            "iterations": self.iterations,
            "plan_updates": self.plan_updates,
            "code_updates": self.code_updates,
            "api_calls": self.api_calls,
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ProblemSummary":
        return cls(**raw)


SUMMARY_METRIC_ORDER = (
    "pass_at_1",
    "token_in_avg",
    "token_out_avg",
    "api_calls_avg",
    "pu_rate",
    "cu_rate",
)


@dataclass(frozen=True)
class MetricsReport:
    """Benchmark summary plus per-problem breakdown. The report names the
    dataset it was computed over so subset rates cannot be misquoted."""

    dataset: str
    pass_at_1: float
    token_in_avg: float
    token_out_avg: float
    api_calls_avg: float
    pu_rate: float
    cu_rate: float
    per_problem: tuple[ProblemSummary, ...]

    def summary(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in SUMMARY_METRIC_ORDER}

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "summary": self.summary(),
            "problems": [p.to_dict() for p in self.per_problem],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "MetricsReport":
        return cls(
            dataset=raw["dataset"],
            per_problem=tuple(ProblemSummary.from_dict(p) for p in raw["problems"]),
            **raw["summary"],
        )


def compute_metrics(dataset_name: str, records: Sequence[RunRecord]) -> MetricsReport:
    """Assemble the full metric suite over a batch of run records."""
    pu_rate, cu_rate = update_rates(records)
    in_avg, out_avg = token_io(records)
    return MetricsReport(
        dataset=dataset_name,
        pass_at_1=pass_at_1(records),
        token_in_avg=in_avg,
        token_out_avg=out_avg,
        api_calls_avg=api_calls_avg(records),
        pu_rate=pu_rate,
        cu_rate=cu_rate,
        per_problem=tuple(ProblemSummary.from_record(r) for r in records),
    )
