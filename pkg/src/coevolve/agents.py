"""Planning and coding agents: render a role prompt, call the backend, parse
the completion.

Plans are opaque text; code is always extracted from a fenced block.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

from .backend import AgentRole, Backend, BackendRequest
from .core import Problem, TestCase
from .templates import DEFAULT_REGISTRY, TemplateRegistry

if TYPE_CHECKING:
    from .rt import ReasoningState


class AgentOutputError(Exception):
    """A completion did not contain the artifact the agent must produce."""


class NoCodeBlock(AgentOutputError):
    """No fenced code block was found in the completion."""


class EmptyPlan(AgentOutputError):
    """A planning completion was blank."""


@dataclass(frozen=True)
class Plan:
    """A natural-language solution plan; revised only on plan-branch iterations."""

    text: str
    iteration_created: int = 0


@dataclass(frozen=True)
class Code:
    """Program source extracted from a fenced block of a completion."""

    text: str
    iteration_created: int = 0


_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def extract_code_block(completion: str) -> str:
    """Return the contents of the last fenced code block.

    The language tag on the opening fence line is stripped; models often
    emit a reasoning block first, so the last fence is taken as the answer.
    """
    blocks = _FENCE_RE.findall(completion)
    if not blocks:
        raise NoCodeBlock("completion contains no fenced code block")
    content = blocks[-1]
    if content.endswith("\n"):
        content = content[:-1]
    return content


def format_sample_io(tests: Sequence[TestCase]) -> str:
    """Render sample test cases as prompt text."""
    return "\n\n".join(
        f"Input:\n{t.input}\nExpected Output:\n{t.expected}" for t in tests
    )


def _complete(
    backend: Backend,
    role: AgentRole,
    bindings: dict[str, str],
    templates: TemplateRegistry,
) -> str:
    prompt = templates.render(role, bindings)
    return backend.complete(BackendRequest(role, prompt)).text


def _as_code(completion: str, iteration: int) -> Code:
    content = extract_code_block(completion)
    if not content.strip():
        raise NoCodeBlock("fenced code block is empty")
    return Code(content, iteration)


def initial_plan(
    problem: Problem,
    backend: Backend,
    *,
    templates: TemplateRegistry = DEFAULT_REGISTRY,
) -> Plan:
    """First planning call; the full completion text becomes the plan."""
    text = _complete(
        backend,
        AgentRole.INITIAL_PLAN,
        {
            "problem": problem.description,
            "sample_io": format_sample_io(problem.sample_tests),
        },
        templates,
    )
    if not text.strip():
        raise EmptyPlan("initial planning returned a blank completion")
    return Plan(text, 0)


def initial_code(
    plan: Plan,
    problem: Problem,
    backend: Backend,
    *,
    language: str = "Python 3",
    templates: TemplateRegistry = DEFAULT_REGISTRY,
) -> Code:
    """Generate the first program from the initial plan and coding template."""
    completion = _complete(
        backend,
        AgentRole.INITIAL_CODE,
        {
            "problem": problem.description,
            "plan": plan.text,
            "template": problem.template,
            "sample_io": format_sample_io(problem.sample_tests),
            "language": language,
        },
        templates,
    )
    return _as_code(completion, plan.iteration_created)


def refine_plan(
    problem: Problem,
    plan: Plan,
    failure_log_text: str,
    strategy: "ReasoningState",
    backend: Backend,
    *,
    templates: TemplateRegistry = DEFAULT_REGISTRY,
) -> Plan:
    """Plan-branch refinement; `strategy` must be the freshly updated state."""
    text = _complete(
        backend,
        AgentRole.PLAN_REFINE,
        {
            "problem": problem.description,
            "plan": plan.text,
            "failure_log": failure_log_text,
            "strategy": strategy.text,
        },
        templates,
    )
    if not text.strip():
        raise EmptyPlan("plan refinement returned a blank completion")
    return Plan(text, strategy.iteration)


def code_after_plan(
    new_plan: Plan,
    problem: Problem,
    backend: Backend,
    *,
    templates: TemplateRegistry = DEFAULT_REGISTRY,
) -> Code:
    """Fresh implementation of a refined plan; the previous code is never shown."""
    completion = _complete(
        backend,
        AgentRole.CODE_AFTER_PLAN,
        {
            "plan": new_plan.text,
            "template": problem.template,
        },
        templates,
    )
    return _as_code(completion, new_plan.iteration_created)


def refine_code(
    problem: Problem,
    code: Code,
    failure_log_text: str,
    strategy: "ReasoningState",
    backend: Backend,
    *,
    templates: TemplateRegistry = DEFAULT_REGISTRY,
) -> Code:
    """Code-branch patching of the current program under the unchanged plan."""
    completion = _complete(
        backend,
        AgentRole.CODE_REFINE,
        {
            "problem": problem.description,
            "code": code.text,
            "template": problem.template,
            "failure_log": failure_log_text,
            "strategy": strategy.text,
        },
        templates,
    )
    return _as_code(completion, strategy.iteration)
