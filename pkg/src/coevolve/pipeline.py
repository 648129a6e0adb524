"""Top-level solve loop for a single problem.

Control flow: initial plan, initial code, then up to the configured number
of evaluate-diagnose-refine iterations over the sample tests. On a failed
iteration the decision module picks the refinement branch, the debugging
strategy is updated, and either the plan is revised (followed by fresh code)
or the code is patched under the unchanged plan. Hidden tests are evaluated
exactly once, after the loop exits.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from . import agents, cdm, rt
from .agents import AgentOutputError, Code, Plan
from .backend import Backend, BackendError, RunBackend
from .cdm import DiagnosticReport, JsonUnparseable, ScoreMatrix, SectionMissing
from .core import Decision, PipelineConfig, Problem, UsageLedger
from .oracle import ExecLimits, ExecutionOracle, FailureLog, SandboxSpawnFailure, format_failure_log
from .rt import EmptyStrategy, ReasoningState, RefinementTarget
from .templates import DEFAULT_REGISTRY, TemplateRegistry

logger = logging.getLogger(__name__)

# Diagnosis stand-in when the analysis call itself failed and the iteration
# degraded to a forced code update.
FALLBACK_DIAGNOSIS = "(diagnosis unavailable: the analysis response could not be parsed)"


@dataclass(frozen=True)
class IterationRecord:
    """Outcome of one loop iteration; decision is present exactly when the
    iteration failed the sample tests and proceeded to refinement."""

    index: int
    satisfied: bool
    decision: Decision | None
    verdict_counts: Mapping[str, int]
    fallback_used: bool
    calls_this_iteration: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "satisfied": self.satisfied,
            "decision": self.decision.value if self.decision else None,
            "verdict_counts": dict(self.verdict_counts),
            "fallback_used": self.fallback_used,
            "calls_this_iteration": self.calls_this_iteration,
        }


@dataclass(frozen=True)
class IterationArtifacts:
    """Everything produced while evaluating iteration `index`: the plan and
    code under test, and the diagnostics generated from their failures."""

    index: int
    plan: str
    code: str
    failure_log: str
    diagnostic: DiagnosticReport | None
    scores: ScoreMatrix | None
    strategy: str | None


@dataclass(frozen=True)
class RunRecord:
    """Full per-problem trace: iteration outcomes, final program, verdicts on
    sample/hidden suites, update counts, and the token/call ledger."""

    problem_id: str
    iterations: tuple[IterationRecord, ...]
    final_code: Code | None
    solved_on_samples: bool
    solved_on_hidden: bool
    plan_updates: int
    code_updates: int
    ledger: UsageLedger
    artifacts: tuple[IterationArtifacts, ...] = ()
    aborted: bool = False
    abort_reason: str | None = None
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "solved_on_samples": self.solved_on_samples,
            "solved_on_hidden": self.solved_on_hidden,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "plan_updates": self.plan_updates,
            "code_updates": self.code_updates,
            "iterations": [it.to_dict() for it in self.iterations],
            "ledger": self.ledger.to_dict(),
            "final_code": self.final_code.text if self.final_code else None,
            "notes": list(self.notes),
        }


def call_budget_bound(config: PipelineConfig) -> int:
    """Worst-case backend-call count, excluding documented parse retries.

    Two pre-loop generation calls, then at most five per failed iteration:
    analysis, scoring, strategy update, and up to two generation calls on
    the plan branch.
    """
    return 2 + 5 * config.max_iterations


def _verdict_counts(failures: FailureLog) -> dict[str, int]:
    counts: dict[str, int] = {}
    passes = failures.total_cases - len(failures.failing)
    if passes:
        counts["Pass"] = passes
    for case in failures.failing:
        counts[case.verdict.value] = counts.get(case.verdict.value, 0) + 1
    return counts


def solve(
    problem: Problem,
    config: PipelineConfig,
    backend: Backend,
    oracle: ExecutionOracle,
    *,
    templates: TemplateRegistry = DEFAULT_REGISTRY,
) -> RunRecord:
    """Run the full co-evolution loop for one problem.

    Fatal backend or extraction failures abort the run; the record so far is
    returned marked aborted (counted as unsolved). Decision-module parse
    failures degrade the iteration to a forced code update instead.
    """
    ledger = UsageLedger()
    run_backend = RunBackend(backend, ledger, config.decoding)
    limits = ExecLimits(config.timeout_seconds, config.max_output_bytes)
    iterations: list[IterationRecord] = []
    artifacts: list[IterationArtifacts] = []
    notes: list[str] = []
    plan: Plan | None = None
    code: Code | None = None
    solved_on_samples = False
    plan_updates = 0
    code_updates = 0
    aborted = False
    abort_reason: str | None = None

    try:
        plan = agents.initial_plan(problem, run_backend, templates=templates)
        code = agents.initial_code(
            plan, problem, run_backend, language=config.language, templates=templates
        )
        strategy = ReasoningState.initial()

        for t in range(config.max_iterations):
            calls_before = ledger.api_calls
            current_plan, current_code = plan, code
            satisfied, failures = oracle.evaluate(
                code,
                problem.sample_tests,
                problem.io_mode,
                limits,
                entry_point=problem.entry_point,
            )
            counts = _verdict_counts(failures)
            if satisfied:
                solved_on_samples = True
                iterations.append(IterationRecord(t, True, None, counts, False, 0))
                artifacts.append(
                    IterationArtifacts(t, current_plan.text, current_code.text, "", None, None, None)
                )
                break

            failure_text = format_failure_log(failures, config.failure_log_case_cap)
            report: DiagnosticReport | None = None
            matrix: ScoreMatrix | None = None
            fallback = False
            try:
                report = cdm.analyze(
                    problem, plan, code, failure_text, run_backend, templates=templates
                )
                matrix = cdm.score(report, run_backend, templates=templates)
                decision = cdm.aggregate(matrix, config.weights)
            except (SectionMissing, JsonUnparseable) as exc:
                logger.warning(
                    "problem %s iteration %d: decision fallback to update_code (%s)",
                    problem.id, t, exc,
                )
                decision = Decision.UPDATE_CODE
                fallback = True

            if fallback:
                diagnosis = report.e_code if report else FALLBACK_DIAGNOSIS
                target = RefinementTarget(Decision.UPDATE_CODE, code.text, diagnosis)
            else:
                target = rt.select_target(decision, plan, code, report)

            strategy = rt.update(
                strategy, target, problem, failure_text, run_backend, templates=templates
            )
            strategy, truncated = rt.apply_char_cap(strategy, config.strategy_char_cap)
            if truncated:
                notes.append(
                    f"strategy text truncated to {config.strategy_char_cap} chars at iteration {t}"
                )

            if decision is Decision.UPDATE_PLAN:
                plan = agents.refine_plan(
                    problem, plan, failure_text, strategy, run_backend, templates=templates
                )
                code = agents.code_after_plan(plan, problem, run_backend, templates=templates)
                plan_updates += 1
            else:
                # Plan object carried over unchanged on the code branch.
                code = agents.refine_code(
                    problem, code, failure_text, strategy, run_backend, templates=templates
                )
                code_updates += 1

            iterations.append(
                IterationRecord(
                    t, False, decision, counts, fallback, ledger.api_calls - calls_before
                )
            )
            artifacts.append(
                IterationArtifacts(
                    t,
                    current_plan.text,
                    current_code.text,
                    failure_text,
                    report,
                    matrix,
                    strategy.text,
                )
            )
    except (BackendError, AgentOutputError, EmptyStrategy, SandboxSpawnFailure) as exc:
        aborted = True
        abort_reason = f"{type(exc).__name__}: {exc}"
        logger.warning("problem %s: run aborted (%s)", problem.id, abort_reason)

    solved_on_hidden = False
    if not aborted and code is not None:
        if problem.hidden_tests:
            solved_on_hidden, _ = oracle.evaluate(
                code,
                problem.hidden_tests,
                problem.io_mode,
                limits,
                entry_point=problem.entry_point,
            )
        else:
            # No hidden suite shipped with the problem: fall back to the
            # sample verdict rather than vacuously passing.
            solved_on_hidden = solved_on_samples

    return RunRecord(
        problem_id=problem.id,
        iterations=tuple(iterations),
        final_code=code,
        solved_on_samples=solved_on_samples,
        solved_on_hidden=solved_on_hidden,
        plan_updates=plan_updates,
        code_updates=code_updates,
        ledger=ledger,
        artifacts=tuple(artifacts),
        aborted=aborted,
        abort_reason=abort_reason,
        notes=tuple(notes),
    )


def write_run_artifacts(record: RunRecord, out_dir: str | Path) -> None:
    """Persist a run: run_record.json and final_code.py at the root, plus one
    iteration-numbered directory per recorded iteration."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "run_record.json").write_text(
        json.dumps(record.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    if record.final_code is not None:
        (root / "final_code.py").write_text(record.final_code.text + "\n", encoding="utf-8")
    for item in record.artifacts:
        it_dir = root / f"iteration_{item.index:03d}"
        it_dir.mkdir(parents=True, exist_ok=True)
        (it_dir / "plan.txt").write_text(item.plan + "\n", encoding="utf-8")
        (it_dir / "code.py").write_text(item.code + "\n", encoding="utf-8")
        if item.failure_log:
            (it_dir / "failure_log.txt").write_text(item.failure_log + "\n", encoding="utf-8")
        if item.diagnostic is not None:
            (it_dir / "diagnostic.txt").write_text(
                cdm.render_report(item.diagnostic) + "\n", encoding="utf-8"
            )
        if item.scores is not None:
            (it_dir / "scores.json").write_text(
                json.dumps(item.scores.to_dict(), indent=2) + "\n", encoding="utf-8"
            )
        if item.strategy is not None:
            (it_dir / "strategy.txt").write_text(item.strategy + "\n", encoding="utf-8")
