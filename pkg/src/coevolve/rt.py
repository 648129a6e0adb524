"""Reasoning trajectory: persistent per-problem debugging strategy and the
decision-conditioned selection of the refinement target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

from .backend import AgentRole, Backend, BackendRequest
from .core import Decision, Problem
from .templates import DEFAULT_REGISTRY, TemplateRegistry

if TYPE_CHECKING:
    from .agents import Code, Plan
    from .cdm import DiagnosticReport


class EmptyStrategy(Exception):
    """A strategy-update completion was blank."""


# Rendered into the strategy slot on the first update so it is never blank.
EMPTY_STRATEGY_PLACEHOLDER = "(no prior strategy)"


@dataclass(frozen=True)
class ReasoningState:
    """The accumulated debugging strategy at a given iteration.

    The iteration-0 state has empty text; the index strictly increases with
    each update within a run.
    """

    text: str
    iteration: int = 0

    @classmethod
    def initial(cls) -> "ReasoningState":
        return cls("", 0)


@dataclass(frozen=True)
class RefinementTarget:
    """The component selected for refinement plus its matching diagnosis.

    content is the plan text on the plan branch and the code text on the
    code branch; diagnosis is the corresponding analysis section (the
    alignment analysis is never selected).
    """

    kind: Decision
    content: str
    diagnosis: str


def select_target(
    decision: Decision,
    plan: "Plan",
    code: "Code",
    report: "DiagnosticReport",
) -> RefinementTarget:
    """Pure decision-conditioned selection of the refinement target."""
    if decision is Decision.UPDATE_PLAN:
        return RefinementTarget(decision, plan.text, report.e_plan)
    return RefinementTarget(decision, code.text, report.e_code)


def update(
    prev: ReasoningState,
    target: RefinementTarget,
    problem: Problem,
    failure_log_text: str,
    backend: Backend,
    *,
    templates: TemplateRegistry = DEFAULT_REGISTRY,
) -> ReasoningState:
    """Produce the next strategy state from the previous one plus the current
    target, its diagnosis, and the failure evidence. One backend call."""
    prompt = templates.render(
        AgentRole.RT_UPDATE,
        {
            "strategy": prev.text if prev.text else EMPTY_STRATEGY_PLACEHOLDER,
            "analyses": target.diagnosis,
            "problem": problem.description,
            "code": target.content,
            "failure_log": failure_log_text,
        },
    )
    response = backend.complete(BackendRequest(AgentRole.RT_UPDATE, prompt))
    if not response.text.strip():
        raise EmptyStrategy("strategy update returned a blank completion")
    return ReasoningState(response.text, prev.iteration + 1)


def apply_char_cap(state: ReasoningState, cap: int) -> tuple[ReasoningState, bool]:
    """Head-truncate the strategy to `cap` characters, keeping the most
    recent text. Returns the (possibly new) state and whether it truncated."""
    if cap > 0 and len(state.text) > cap:
        return ReasoningState(state.text[-cap:], state.iteration), True
    return state, False
