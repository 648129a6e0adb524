"""Prompt template registry: one template per agent role.

Templates use {{name}} placeholders drawn from a closed vocabulary and are
rendered by plain single-pass substitution. An override directory may
replace individual templates for prompt experiments.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Mapping

from .backend import AgentRole

PLACEHOLDERS = frozenset(
    {
        "problem",
        "plan",
        "code",
        "sample_io",
        "failure_log",
        "strategy",
        "template",
        "language",
        "analyses",
        "decisions",
    }
)

_PLACEHOLDER_RE = re.compile(r"\{\{(\w+)\}\}")


class TemplateError(Exception):
    """Base class for template registry failures."""


class UnknownRole(TemplateError):
    """No template is registered for the requested role."""


class MissingBinding(TemplateError):
    """The template references a placeholder absent from the binding map."""


INITIAL_PLAN_TEMPLATE = """\
INITIAL PLANNING

Task:
Generate a detailed step-by-step plan to solve the given programming problem. The plan should describe the reasoning and algorithmic approach without generating any executable code.

- Recall a relevant but distinct example problem.
- Describe its solution approach and underlying algorithm.
- Based on this reasoning, produce a detailed plan for the original problem.
- Do not generate any code.

Problem:
{{problem}}

Sample Test Cases:
{{sample_io}}
"""

INITIAL_CODE_TEMPLATE = """\
INITIAL CODE GENERATION

Task:
Generate an executable program that solves the given problem by strictly following the provided plan. The code must conform to the specified programming language and input/output format.

- You are given a step-by-step plan describing how to solve the problem.
- Implement the solution strictly according to this plan.
- If available, follow the provided coding template without modification.
- Follow the sample input/output format exactly.
- Do not add extra explanations, comments outside the code, or auxiliary text.
- Do not include assertion or testing statements.

IMPORTANT INSTRUCTIONS:
- The generated code must be written in {{language}}.
- The entire code must be enclosed within a triple backtick (```) block.
- Read input from standard input and write output to standard output.
- Do not include any extra print statements.

Problem:
{{problem}}

Plan:
{{plan}}

Coding Template:
{{template}}

Sample Test Cases:
{{sample_io}}
"""

DIAGNOSTIC_ANALYSIS_TEMPLATE = """\
MERGED DIAGNOSTIC ANALYSIS

Task:
Perform a comprehensive diagnostic analysis of the current plan, code, and their alignment with the problem, based on observed execution failures. The goal is to identify errors, inconsistencies, and misalignments without proposing new solutions.

Context Provided:
- The original problem description.
- The current plan.
- The current code implementation.
- The failure log, which records incorrect behavior on test cases.

Response Structure (Strict):
- Plan Analysis
  - Simulation: Step-by-step simulation of the plan on the failing test cases.
  - Insight: Determine whether the plan is incorrect, or whether errors arise from plan-to-code translation, and explain how the plan should be corrected.
- Code Analysis
  - Simulation: Line-by-line execution of the code on the failing test cases.
  - Insight: Identify implementation bugs or logical errors and explain how they should be fixed.
- Content Analysis
  - Provide a single concise insight (4-5 sentences) evaluating the alignment between the problem, plan, and code.
  - Conclude which component(s) should be updated (plan, code, both).

IMPORTANT:
- The failure log is always correct and must not be questioned.
- Do not generate new plans or code.
- Do not introduce alternative solutions.
- Strictly follow the specified structure.

Problem:
{{problem}}

Current Plan:
{{plan}}

Current Code:
{{code}}

Failure Log:
{{failure_log}}
"""

CDM_SCORING_TEMPLATE = """\
CDM SCORING

Task:
Evaluate each candidate decision using both confidence and consistency criteria, based on diagnostic insights produced by multiple analysis agents. The goal is to quantitatively assess which decision should be taken in the next iteration.

Context Provided:
- A set of candidate decisions (e.g., update plan, update code only).
- Diagnostic insights from multiple analysis types:
  - Plan analysis
  - Code analysis
  - Content (alignment) analysis
- Predefined analysis pairs for consistency evaluation.

Scoring Definitions:
- Confidence: Measures how strongly a single analysis supports or refutes a given decision.
- Consistency: Measures the degree of agreement between pairs of analyses regarding the same decision.

Scoring Rules:
- All scores must lie in the range [0, 1].
- Higher confidence indicates stronger, more direct evidence.
- Higher consistency indicates stronger agreement across analyses.
- Contradictory insights must result in low scores.

Response Format (Strict JSON):
{
  "confidence_scores": {
    "<decision>": {
      "<analysis_type>": {
        "confidence": float,
        "reasoning": string
      }
    }
  },
  "consistency_scores": {
    "<decision>": {
      "<analysis1>-<analysis2>": {
        "consistency": float,
        "reasoning": string
      }
    }
  }
}

IMPORTANT:
- Output JSON only; do not include markdown or extra text.
- Use concise reasoning (1-3 sentences per score).
- If analyses contradict each other, assign low scores.

Decisions:
{{decisions}}

Diagnostic Insights:
{{analyses}}
"""

RT_UPDATE_TEMPLATE = """\
REASONING TRAJECTORY UPDATE

Task:
Update the persistent debugging strategy based on newly observed diagnostic evidence, while maintaining continuity with the previous strategy.

Inputs:
- Previous strategy
- Diagnostic evidence for the selected target
- Problem description
- Current target state
- Failure log

Guidelines:
- Incorporate new evidence without repeating the previous strategy verbatim.
- State concrete next hypotheses or actions.
- Avoid ineffective or repeated fixes.
- Do not generate code or a new plan.

Output:
Return only the updated debugging strategy text.

Previous Strategy:
{{strategy}}

Diagnostic Evidence:
{{analyses}}

Problem:
{{problem}}

Current Target State:
{{code}}

Failure Log:
{{failure_log}}
"""

PLAN_REFINE_TEMPLATE = """\
PLAN REFINEMENT

Task:
Refine the current plan based on observed failures and the updated reasoning trajectory, producing a corrected plan for the next iteration.

Inputs:
- Problem description
- Current plan
- Failure log
- Updated debugging strategy

Guidelines:
- Modify the plan to address diagnosed errors.
- Ensure logical coherence and step-by-step correctness.
- Do not generate executable code.
- Output the plan only, without explanations.

Output:
Return the updated plan.

Problem:
{{problem}}

Current Plan:
{{plan}}

Failure Log:
{{failure_log}}

Updated Debugging Strategy:
{{strategy}}
"""

CODE_AFTER_PLAN_TEMPLATE = """\
CODE GENERATION AFTER PLAN UPDATE

Task:
Generate a new code implementation based on the refined plan, incorporating guidance from the updated reasoning trajectory.

Inputs:
- Refined plan
- Coding template

Guidelines:
- Implement the solution strictly following the refined plan.
- Respect the coding template.
- Generate a new implementation (do not reuse previous code).
- Do not include explanations or extra text.

Output:
Return the generated code only, enclosed in a code block.

Refined Plan:
{{plan}}

Coding Template:
{{template}}
"""

CODE_REFINE_TEMPLATE = """\
CODE REFINEMENT / PATCHING

Task:
Refine the existing code implementation to correct observed failures, guided by diagnostic insights and the updated reasoning trajectory.

Inputs:
- Problem description
- Current code
- Coding template
- Failure log
- Updated debugging strategy

Guidelines:
- Modify the code to address diagnosed errors.
- Incorporate guidance from the updated debugging strategy.
- Respect the coding template.
- Do not reuse the same incorrect implementation.
- Do not add testing or assertion code.
- Output only the corrected code.

Output:
Return the refined code enclosed in a code block.

Problem:
{{problem}}

Current Code:
{{code}}

Coding Template:
{{template}}

Failure Log:
{{failure_log}}

Updated Debugging Strategy:
{{strategy}}
"""

DEFAULT_TEMPLATES: dict[AgentRole, str] = {
    AgentRole.INITIAL_PLAN: INITIAL_PLAN_TEMPLATE,
    AgentRole.INITIAL_CODE: INITIAL_CODE_TEMPLATE,
    AgentRole.DIAGNOSTIC_ANALYSIS: DIAGNOSTIC_ANALYSIS_TEMPLATE,
    AgentRole.CDM_SCORING: CDM_SCORING_TEMPLATE,
    AgentRole.RT_UPDATE: RT_UPDATE_TEMPLATE,
    AgentRole.PLAN_REFINE: PLAN_REFINE_TEMPLATE,
    AgentRole.CODE_AFTER_PLAN: CODE_AFTER_PLAN_TEMPLATE,
    AgentRole.CODE_REFINE: CODE_REFINE_TEMPLATE,
}


class TemplateRegistry:
    """Immutable role-to-template mapping with validated placeholders."""

    def __init__(self, bodies: Mapping[AgentRole, str] | None = None):
        self._bodies = dict(DEFAULT_TEMPLATES if bodies is None else bodies)
        for role, body in self._bodies.items():
            unknown = set(_PLACEHOLDER_RE.findall(body)) - PLACEHOLDERS
            if unknown:
                raise TemplateError(
                    f"template for {role.value} uses unknown placeholders: {sorted(unknown)}"
                )

    def roles(self) -> frozenset[AgentRole]:
        return frozenset(self._bodies)

    def body(self, role: AgentRole) -> str:
        try:
            return self._bodies[role]
        except KeyError:
            raise UnknownRole(f"no template registered for role {role!r}") from None

    def placeholders(self, role: AgentRole) -> frozenset[str]:
        return frozenset(_PLACEHOLDER_RE.findall(self.body(role)))

    def render(self, role: AgentRole, bindings: Mapping[str, str]) -> str:
        """Substitute every placeholder in the role's template.

        Single-pass, so placeholder-like text inside bound values is left
        alone. Raises MissingBinding when the template references a name the
        bindings do not provide.
        """
        body = self.body(role)
        missing = sorted(set(_PLACEHOLDER_RE.findall(body)) - set(bindings))
        if missing:
            raise MissingBinding(
                f"missing bindings {missing} for role {role.value}"
            )
        return _PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), body)

    def with_overrides(self, directory: str | Path) -> "TemplateRegistry":
        """Return a registry where <RoleName>.txt files in `directory`
        replace the corresponding templates."""
        directory = Path(directory)
        bodies = dict(self._bodies)
        for role in AgentRole:
            candidate = directory / f"{role.value}.txt"
            if candidate.is_file():
                bodies[role] = candidate.read_text(encoding="utf-8")
        return TemplateRegistry(bodies)


DEFAULT_REGISTRY = TemplateRegistry()


def render(
    role: AgentRole,
    bindings: Mapping[str, str],
    registry: TemplateRegistry | None = None,
) -> str:
    """Render a role's template against the default (or given) registry."""
    return (registry or DEFAULT_REGISTRY).render(role, bindings)
