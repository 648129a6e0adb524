"""Plan-code co-evolution engine for iterative program synthesis.

Iteratively generates code from a natural-language plan; after each failing
evaluation a consensus module decides whether to revise the plan or patch
the code, guided by an accumulated debugging strategy, until the sample
tests pass or the iteration budget runs out.
"""

from .backend import (
    AgentRole,
    BackendRequest,
    BackendResponse,
    HttpBackend,
    RunBackend,
    ScriptedBackend,
)
from .bench import (
    Dataset,
    MetricsReport,
    compute_metrics,
    load_dataset,
    run_benchmark,
)
from .core import (
    Decision,
    IoMode,
    PipelineConfig,
    Problem,
    TestCase,
    TrustWeights,
    UsageLedger,
    make_trust_weights,
    validate_problem,
)
from .oracle import ExecLimits, ExecutionOracle, Verdict
from .pipeline import RunRecord, call_budget_bound, solve, write_run_artifacts

__version__ = "0.1.0"

__all__ = [
    "AgentRole",
    "BackendRequest",
    "BackendResponse",
    "Dataset",
    "Decision",
    "ExecLimits",
    "ExecutionOracle",
    "HttpBackend",
    "IoMode",
    "MetricsReport",
    "PipelineConfig",
    "Problem",
    "RunBackend",
    "RunRecord",
    "ScriptedBackend",
    "TestCase",
    "TrustWeights",
    "UsageLedger",
    "Verdict",
    "__version__",
    "call_budget_bound",
    "compute_metrics",
    "load_dataset",
    "make_trust_weights",
    "run_benchmark",
    "solve",
    "validate_problem",
    "write_run_artifacts",
]
