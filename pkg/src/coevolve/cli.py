"""Command-line entry point: solve a single problem, run a benchmark, or
validate a dataset.

Exit codes: 0 solved / completed, 1 unsolved, 2 config error, 3 backend
error, 4 input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from .backend import Backend, HttpBackend, ScriptedBackend
from .bench import (
    DatasetError,
    compute_metrics,
    iter_dataset_diagnostics,
    load_dataset,
    run_benchmark,
)
from .core import (
    PipelineConfig,
    ProblemValidationError,
    TrustWeights,
    validate_problem,
)
from .oracle import ExecutionOracle
from .pipeline import solve, write_run_artifacts
from .templates import DEFAULT_REGISTRY, TemplateRegistry

EXIT_SOLVED = 0
EXIT_UNSOLVED = 1
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_INPUT = 4


class CliError(Exception):
    exit_code = EXIT_CONFIG


class ConfigError(CliError):
    exit_code = EXIT_CONFIG


class InputError(CliError):
    exit_code = EXIT_INPUT


@dataclass
class CliConfig:
    pipeline: PipelineConfig
    backend_spec: dict[str, Any]
    oracle: ExecutionOracle
    jobs: int
    templates: TemplateRegistry


def _parse_weights(raw: Any) -> TrustWeights:
    if isinstance(raw, Mapping):
        try:
            return TrustWeights(float(raw["plan"]), float(raw["code"]), float(raw["align"]))
        except KeyError as exc:
            raise ConfigError(f"weights map needs plan/code/align keys, missing {exc}") from None
    if isinstance(raw, Sequence) and len(raw) == 3:
        return TrustWeights(float(raw[0]), float(raw[1]), float(raw[2]))
    raise ConfigError("weights must be a plan/code/align map or a 3-element list")


def load_config(path: str | Path) -> CliConfig:
    """Load and validate the run configuration.

    Relative paths inside the file resolve against the config file's
    directory; referenced files must exist at load time.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, Mapping):
        raise ConfigError("config root must be a JSON object")

    base_dir = path.parent
    pipeline_raw = dict(raw.get("pipeline", {}))
    oracle_raw = dict(raw.get("oracle", {}))

    # The oracle section owns execution limits when both sections set them.
    timeout = float(
        oracle_raw.get("timeout_seconds", pipeline_raw.get("timeout_seconds", 10.0))
    )
    max_output = int(
        oracle_raw.get("max_output_bytes", pipeline_raw.get("max_output_bytes", 1 << 20))
    )

    kwargs: dict[str, Any] = {
        "timeout_seconds": timeout,
        "max_output_bytes": max_output,
    }
    for key in ("max_iterations", "failure_log_case_cap", "strategy_char_cap"):
        if key in pipeline_raw:
            kwargs[key] = int(pipeline_raw[key])
    if "language" in pipeline_raw:
        kwargs["language"] = str(pipeline_raw["language"])
    if "decoding" in pipeline_raw:
        if not isinstance(pipeline_raw["decoding"], Mapping):
            raise ConfigError("pipeline.decoding must be an object")
        kwargs["decoding"] = dict(pipeline_raw["decoding"])
    if "weights" in pipeline_raw:
        kwargs["weights"] = _parse_weights(pipeline_raw["weights"])
    try:
        pipeline_config = PipelineConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid pipeline config: {exc}") from None

    backend_spec = dict(raw.get("backend", {}))
    kind = backend_spec.get("kind")
    if kind not in ("scripted", "http"):
        raise ConfigError("backend.kind must be 'scripted' or 'http'")
    if kind == "scripted":
        transcript = backend_spec.get("transcript")
        if not transcript:
            raise ConfigError("scripted backend requires a 'transcript' path")
        transcript_path = (base_dir / transcript).resolve()
        if not transcript_path.is_file():
            raise ConfigError(f"transcript file not found: {transcript_path}")
        backend_spec["transcript"] = str(transcript_path)
    else:
        for key in ("endpoint", "model"):
            if not backend_spec.get(key):
                raise ConfigError(f"http backend requires {key!r}")

    interpreter = oracle_raw.get("interpreter")
    if interpreter is not None and (
        not isinstance(interpreter, list) or not all(isinstance(a, str) for a in interpreter)
    ):
        raise ConfigError("oracle.interpreter must be a list of strings")
    oracle = ExecutionOracle(
        interpreter, compile_check=bool(oracle_raw.get("compile_check", True))
    )

    jobs = int(raw.get("bench", {}).get("jobs", 1))
    if jobs < 1:
        raise ConfigError("bench.jobs must be >= 1")

    templates = DEFAULT_REGISTRY
    overrides = pipeline_raw.get("template_overrides")
    if overrides:
        override_dir = (base_dir / overrides).resolve()
        if not override_dir.is_dir():
            raise ConfigError(f"template override directory not found: {override_dir}")
        templates = DEFAULT_REGISTRY.with_overrides(override_dir)

    return CliConfig(pipeline_config, backend_spec, oracle, jobs, templates)


def build_backend(spec: Mapping[str, Any]) -> Backend:
    if spec["kind"] == "scripted":
        return ScriptedBackend.from_jsonl(spec["transcript"])
    api_key = None
    env_name = spec.get("api_key_env")
    if env_name:
        api_key = os.environ.get(env_name)
        if api_key is None:
            raise ConfigError(f"environment variable {env_name!r} is not set")
    return HttpBackend(
        spec["endpoint"],
        spec["model"],
        api_key,
        timeout_seconds=float(spec.get("timeout_seconds", 60.0)),
        max_retries=int(spec.get("max_retries", 3)),
    )


def _apply_backend_override(config: CliConfig, override: str | None) -> None:
    if not override:
        return
    kind, _, rest = override.partition(":")
    if kind == "scripted" and rest:
        if not Path(rest).is_file():
            raise ConfigError(f"transcript file not found: {rest}")
        config.backend_spec = {"kind": "scripted", "transcript": rest}
    elif kind == "http" and rest:
        spec = dict(config.backend_spec)
        spec.update({"kind": "http", "endpoint": rest})
        if not spec.get("model"):
            raise ConfigError("http override requires a model in the config backend section")
        config.backend_spec = spec
    else:
        raise ConfigError(
            f"bad --backend-override {override!r}; use scripted:<transcript> or http:<endpoint>"
        )


def _load_problem(path: str) -> Any:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read problem {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"problem {path} is not valid JSON: {exc}") from None
    try:
        return validate_problem(raw)
    except ProblemValidationError as exc:
        raise InputError(f"invalid problem {path}: {exc}") from None


def cmd_solve(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    _apply_backend_override(config, args.backend_override)
    problem = _load_problem(args.problem)
    backend = build_backend(config.backend_spec)
    record = solve(
        problem, config.pipeline, backend, config.oracle, templates=config.templates
    )
    write_run_artifacts(record, args.out)
    if record.aborted:
        print(f"run aborted: {record.abort_reason}", file=sys.stderr)
        return EXIT_BACKEND
    print(
        f"{problem.id}: solved_on_hidden={record.solved_on_hidden} "
        f"api_calls={record.ledger.api_calls}"
    )
    return EXIT_SOLVED if record.solved_on_hidden else EXIT_UNSOLVED


def cmd_bench(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    try:
        dataset = load_dataset(args.dataset)
    except OSError as exc:
        raise InputError(f"cannot read dataset {args.dataset}: {exc}") from None
    backend = build_backend(config.backend_spec)
    jobs = args.jobs if args.jobs is not None else config.jobs
    records = run_benchmark(
        dataset, config.pipeline, backend, config.oracle, jobs, templates=config.templates
    )
    report = compute_metrics(dataset.name, records)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(report.to_json(), encoding="utf-8")
    for name, value in report.summary().items():
        print(f"{name:<15} {value:.4f}")
    return EXIT_SOLVED


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        diagnostics = iter_dataset_diagnostics(args.dataset)
    except OSError as exc:
        raise InputError(f"cannot read dataset {args.dataset}: {exc}") from None
    if diagnostics:
        for lineno, message in diagnostics:
            print(f"line {lineno}: {message}", file=sys.stderr)
        return EXIT_INPUT
    dataset = load_dataset(args.dataset)
    print(f"{len(dataset.problems)} problems OK")
    return EXIT_SOLVED


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coevolve",
        description="Plan-code co-evolution engine for iterative program synthesis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a single problem")
    p_solve.add_argument("--problem", required=True, help="problem JSON file")
    p_solve.add_argument("--config", required=True, help="config JSON file")
    p_solve.add_argument("--out", required=True, help="artifact output directory")
    p_solve.add_argument(
        "--backend-override",
        help="override the configured backend: scripted:<transcript> or http:<endpoint>",
    )
    p_solve.set_defaults(func=cmd_solve)

    p_bench = sub.add_parser("bench", help="run a benchmark dataset")
    p_bench.add_argument("--dataset", required=True, help="JSONL dataset file")
    p_bench.add_argument("--config", required=True, help="config JSON file")
    p_bench.add_argument("--out", required=True, help="metrics report output path")
    p_bench.add_argument("--jobs", type=int, default=None, help="concurrent runs")
    p_bench.set_defaults(func=cmd_bench)

    p_validate = sub.add_parser("validate", help="validate a dataset file")
    p_validate.add_argument("--dataset", required=True, help="JSONL dataset file")
    p_validate.set_defaults(func=cmd_validate)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
