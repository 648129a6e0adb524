"""Collaborative decision-making: one diagnostic-analysis call, one scoring
call, then deterministic weighted aggregation to a binary update decision.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Any, Mapping

from .agents import Code, Plan
from .backend import AgentRole, Backend, BackendRequest
from .core import Decision, Problem, TrustWeights
from .templates import DEFAULT_REGISTRY, TemplateRegistry

ANALYSES = ("plan", "code", "align")
PAIRS = ("plan-code", "plan-align", "code-align")

# The consistency factor for analysis i is the score of the unique pair over
# the other two analyses.
COMPLEMENT_PAIR = {"plan": "code-align", "code": "plan-align", "align": "plan-code"}

# Wire vocabulary used in the scoring prompt/response ("content" maps to the
# internal alignment analysis).
_WIRE_DECISIONS = {"update_plan": Decision.UPDATE_PLAN, "update_code": Decision.UPDATE_CODE}
_WIRE_ANALYSES = {"plan": "plan", "code": "code", "content": "align"}
_WIRE_PAIRS = {"plan-code": "plan-code", "plan-content": "plan-align", "code-content": "code-align"}

SECTION_HEADINGS = ("Plan Analysis", "Code Analysis", "Content Analysis")

DECISIONS_TEXT = (
    '- "update_plan": revise the high-level solution plan before regenerating the code.\n'
    '- "update_code": keep the current plan and patch the code implementation.'
)

_FORMAT_REMINDER = (
    "REMINDER: Your previous response did not follow the required structure. "
    "Respond again with exactly three sections headed 'Plan Analysis', "
    "'Code Analysis', and 'Content Analysis'."
)


class CdmError(Exception):
    """Base class for decision-module parsing failures."""


class SectionMissing(CdmError):
    """A required analysis heading is absent (or its section is empty)."""


class JsonUnparseable(CdmError):
    """The scoring response is not valid schema-conformant JSON."""


@dataclass(frozen=True)
class DiagnosticReport:
    """The three complementary analyses extracted from one completion."""

    e_plan: str
    e_code: str
    e_align: str


@dataclass(frozen=True)
class ScoreMatrix:
    """Per-decision confidence per analysis and consistency per analysis pair.

    All twelve entries are present and clamped to [0, 1].
    """

    confidence: Mapping[tuple[str, Decision], float]
    consistency: Mapping[tuple[str, Decision], float]

    def __post_init__(self) -> None:
        for analysis in ANALYSES:
            for decision in Decision:
                if (analysis, decision) not in self.confidence:
                    raise ValueError(f"missing confidence entry ({analysis}, {decision})")
        for pair in PAIRS:
            for decision in Decision:
                if (pair, decision) not in self.consistency:
                    raise ValueError(f"missing consistency entry ({pair}, {decision})")

    def to_dict(self) -> dict[str, Any]:
        return {
            "confidence": {
                analysis: {d.value: self.confidence[(analysis, d)] for d in Decision}
                for analysis in ANALYSES
            },
            "consistency": {
                pair: {d.value: self.consistency[(pair, d)] for d in Decision}
                for pair in PAIRS
            },
        }


def render_report(report: DiagnosticReport) -> str:
    """Render the three analyses back to headed prompt text."""
    return (
        f"Plan Analysis:\n{report.e_plan}\n\n"
        f"Code Analysis:\n{report.e_code}\n\n"
        f"Content Analysis:\n{report.e_align}"
    )


def _parse_report(completion: str) -> DiagnosticReport:
    positions = []
    for heading in SECTION_HEADINGS:
        at = completion.find(heading)
        if at < 0:
            raise SectionMissing(f"heading {heading!r} not found in analysis response")
        positions.append(at)
    if positions != sorted(positions):
        raise SectionMissing("analysis sections are out of order")
    sections = []
    bounds = positions + [len(completion)]
    for i, heading in enumerate(SECTION_HEADINGS):
        start = positions[i] + len(heading)
        body = completion[start : bounds[i + 1]].lstrip(" \t:*#").strip()
        if not body:
            raise SectionMissing(f"section {heading!r} is empty")
        sections.append(body)
    return DiagnosticReport(*sections)


def analyze(
    problem: Problem,
    plan: Plan,
    code: Code,
    failure_log_text: str,
    backend: Backend,
    *,
    templates: TemplateRegistry = DEFAULT_REGISTRY,
) -> DiagnosticReport:
    """Run the merged diagnostic analysis over the failing state.

    One backend call, plus one retry with a format reminder if the response
    does not carry the three required sections.
    """
    if not failure_log_text:
        raise ValueError("analysis requires a nonempty failure log")
    prompt = templates.render(
        AgentRole.DIAGNOSTIC_ANALYSIS,
        {
            "problem": problem.description,
            "plan": plan.text,
            "code": code.text,
            "failure_log": failure_log_text,
        },
    )
    response = backend.complete(BackendRequest(AgentRole.DIAGNOSTIC_ANALYSIS, prompt))
    try:
        return _parse_report(response.text)
    except SectionMissing:
        retry = backend.complete(
            BackendRequest(
                AgentRole.DIAGNOSTIC_ANALYSIS, f"{prompt}\n\n{_FORMAT_REMINDER}"
            )
        )
        return _parse_report(retry.text)


_FENCED_JSON_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def _strip_fences(text: str) -> str:
    blocks = _FENCED_JSON_RE.findall(text)
    return blocks[-1] if blocks else text


def _score_value(cell: Any, key: str, where: str) -> float:
    if isinstance(cell, Mapping):
        if key not in cell:
            raise JsonUnparseable(f"missing {key!r} value at {where}")
        cell = cell[key]
    if isinstance(cell, bool) or not isinstance(cell, (int, float)):
        raise JsonUnparseable(f"non-numeric score at {where}: {cell!r}")
    value = float(cell)
    if not math.isfinite(value):
        raise JsonUnparseable(f"non-finite score at {where}")
    return min(1.0, max(0.0, value))


def _parse_scores(completion: str) -> ScoreMatrix:
    try:
        data = json.loads(_strip_fences(completion).strip())
    except json.JSONDecodeError as exc:
        raise JsonUnparseable(f"invalid JSON: {exc}") from None
    if not isinstance(data, Mapping):
        raise JsonUnparseable("scoring response is not a JSON object")

    confidence: dict[tuple[str, Decision], float] = {}
    consistency: dict[tuple[str, Decision], float] = {}
    conf_block = data.get("confidence_scores")
    cons_block = data.get("consistency_scores")
    if not isinstance(conf_block, Mapping) or not isinstance(cons_block, Mapping):
        raise JsonUnparseable("confidence_scores / consistency_scores missing")
    for wire_decision, decision in _WIRE_DECISIONS.items():
        conf_row = conf_block.get(wire_decision)
        if not isinstance(conf_row, Mapping):
            raise JsonUnparseable(f"missing confidence_scores[{wire_decision!r}]")
        for wire_analysis, analysis in _WIRE_ANALYSES.items():
            where = f"confidence_scores[{wire_decision!r}][{wire_analysis!r}]"
            if wire_analysis not in conf_row:
                raise JsonUnparseable(f"missing {where}")
            confidence[(analysis, decision)] = _score_value(
                conf_row[wire_analysis], "confidence", where
            )
        cons_row = cons_block.get(wire_decision)
        if not isinstance(cons_row, Mapping):
            raise JsonUnparseable(f"missing consistency_scores[{wire_decision!r}]")
        for wire_pair, pair in _WIRE_PAIRS.items():
            where = f"consistency_scores[{wire_decision!r}][{wire_pair!r}]"
            if wire_pair not in cons_row:
                raise JsonUnparseable(f"missing {where}")
            consistency[(pair, decision)] = _score_value(
                cons_row[wire_pair], "consistency", where
            )
    return ScoreMatrix(confidence, consistency)


def score(
    report: DiagnosticReport,
    backend: Backend,
    *,
    templates: TemplateRegistry = DEFAULT_REGISTRY,
) -> ScoreMatrix:
    """Score both candidate decisions in a single backend call.

    Markdown fences are stripped before parsing; a parse failure triggers one
    retry with the parse error appended, after which JsonUnparseable is raised.
    """
    prompt = templates.render(
        AgentRole.CDM_SCORING,
        {"decisions": DECISIONS_TEXT, "analyses": render_report(report)},
    )
    response = backend.complete(BackendRequest(AgentRole.CDM_SCORING, prompt))
    try:
        return _parse_scores(response.text)
    except JsonUnparseable as exc:
        retry_prompt = (
            f"{prompt}\n\nREMINDER: Your previous response could not be parsed "
            f"({exc}). Output the JSON object only."
        )
        retry = backend.complete(BackendRequest(AgentRole.CDM_SCORING, retry_prompt))
        return _parse_scores(retry.text)


def aggregate_scores(
    matrix: ScoreMatrix, weights: TrustWeights
) -> dict[Decision, float]:
    """Aggregated score per decision: sum over analyses of
    weight * confidence(analysis, d) * consistency(complement pair, d)."""
    weight_of = {"plan": weights.w_plan, "code": weights.w_code, "align": weights.w_align}
    return {
        decision: sum(
            weight_of[analysis]
            * matrix.confidence[(analysis, decision)]
            * matrix.consistency[(COMPLEMENT_PAIR[analysis], decision)]
            for analysis in ANALYSES
        )
        for decision in Decision
    }


def aggregate(matrix: ScoreMatrix, weights: TrustWeights) -> Decision:
    """Pick the decision with the larger aggregated score.

    Ties resolve to UPDATE_CODE: the code branch costs one subsequent
    generation call versus two for the plan branch.
    """
    totals = aggregate_scores(matrix, weights)
    if totals[Decision.UPDATE_PLAN] > totals[Decision.UPDATE_CODE]:
        return Decision.UPDATE_PLAN
    return Decision.UPDATE_CODE
