"""Command-line entry points: collect, fix, report, pool inspect.

Configuration comes from a JSON file plus a handful of overriding flags.
Every file the CLI writes is named on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .domain import (
    KnowledgePool,
    PoolSchemaError,
    SourceFunction,
    pool_insert,
    pool_load,
    pool_save,
)
from .gateway import (
    AUTH_ENV_VAR,
    ChatBackend,
    EmbeddingProvider,
    GenerationParams,
    HashingEmbedder,
    HttpChatBackend,
    HttpEmbeddingProvider,
    ScriptedChatBackend,
)
from .orchestrator import (
    BudgetPolicy,
    CollectionEvent,
    FixStatus,
    STRATEGIES,
    collect_iter,
    fix,
)
from .reporting import (
    RecordSchemaError,
    RecordWriter,
    format_report,
    lexical_report,
    read_records,
    result_to_record,
    summarize,
)
from .verify import AdapterRegistry, InfrastructureError, WorkspaceVerifier

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_INTERRUPT = 130


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """One run's wiring: backend, embedder, strategy, budgets, and paths."""

    backend: dict = field(default_factory=dict)
    embedder: dict = field(default_factory=lambda: {"fallback": True})
    strategy: str = "contrastive"
    policy: BudgetPolicy = field(default_factory=BudgetPolicy)
    adapters_path: str | None = None
    pool_path: str | None = None
    records_path: str = "runs.jsonl"
    embedding_cache_path: str | None = None
    seed: int = 0
    workers: int | None = None
    include_transcripts: bool = True

    def __post_init__(self):
        if self.backend:
            is_http = "url" in self.backend
            is_mock = "mock_script_path" in self.backend
            if is_http == is_mock:
                raise ConfigError(
                    "backend must set exactly one of url or mock_script_path"
                )
        is_http = "url" in self.embedder
        is_fallback = bool(self.embedder.get("fallback"))
        if is_http == is_fallback:
            raise ConfigError("embedder must set exactly one of url or fallback")
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}"
            )


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    file = Path(path)
    if not file.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    policy_raw = raw.get("policy", {})
    policy = BudgetPolicy(
        max_collection_attempts=policy_raw.get("max_collection_attempts", 25),
        max_sessions=policy_raw.get("max_sessions", 25),
        max_interactions=policy_raw.get("max_interactions", 5),
        shots=policy_raw.get("shots", 2),
        end_to_end_timeout=policy_raw.get("end_to_end_timeout_secs", 5 * 3600.0),
    )
    return RunConfig(
        backend=raw.get("backend", {}),
        embedder=raw.get("embedder", {"fallback": True}),
        strategy=raw.get("strategy", "contrastive"),
        policy=policy,
        adapters_path=raw.get("adapters_path"),
        pool_path=raw.get("pool_path"),
        records_path=raw.get("records_path", "runs.jsonl"),
        seed=raw.get("seed", 0),
    )


def apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "mock", None):
        config = replace(config, backend={"mock_script_path": args.mock})
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "strategy", None):
        config = replace(config, strategy=args.strategy)
    if getattr(args, "no_transcripts", False):
        config = replace(config, include_transcripts=False)
    return config


def build_gateway(config: RunConfig) -> tuple[ChatBackend, GenerationParams]:
    backend = config.backend
    if not backend:
        raise ConfigError("no backend configured; set backend.url or --mock PATH")
    if "mock_script_path" in backend:
        path = Path(backend["mock_script_path"])
        if not path.is_file():
            raise ConfigError(f"mock script not found: {path}")
        return ScriptedChatBackend.from_file(path), GenerationParams(model_id="mock")
    params = GenerationParams(
        model_id=backend.get("model_id", ""),
        temperature=backend.get("temperature", 1.0),
        max_output_tokens=backend.get("max_output_tokens", 1024),
        request_timeout=backend.get("request_timeout", 60.0),
    )
    return (
        HttpChatBackend(
            backend["url"], auth_env_var=backend.get("auth_env_var", AUTH_ENV_VAR)
        ),
        params,
    )


def build_embedder(config: RunConfig) -> EmbeddingProvider:
    embedder = config.embedder
    if embedder.get("fallback"):
        return HashingEmbedder(dimension=embedder.get("dimension", 256))
    return HttpEmbeddingProvider(
        url=embedder["url"],
        provider_id=embedder["provider_id"],
        dimension=embedder.get("dimension", 256),
        auth_env_var=embedder.get("auth_env_var", AUTH_ENV_VAR),
    )


def load_functions(path: str | Path) -> list[tuple[SourceFunction, str]]:
    """Read the functions input file: (function, adapter id) pairs."""
    file = Path(path)
    if not file.is_file():
        raise ConfigError(f"functions file not found: {path}")
    try:
        raw = json.loads(file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"functions file {path} is not valid JSON: {exc}")
    if not isinstance(raw, list):
        raise ConfigError(f"functions file {path} must hold a JSON array")
    functions = []
    for i, record in enumerate(raw):
        try:
            function = SourceFunction(
                id=record["id"],
                language=record["language"],
                body=record["body"],
                fault_lines=frozenset(record["fault_lines"])
                if record.get("fault_lines")
                else None,
                scenario=record.get("scenario"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"functions file {path}, entry {i}: {exc}")
        functions.append((function, record.get("adapter", function.id)))
    return functions


def _build_registry(
    config: RunConfig, functions: list[tuple[SourceFunction, str]]
) -> AdapterRegistry:
    if not config.adapters_path:
        raise ConfigError("config is missing adapters_path")
    registry = AdapterRegistry.from_file(config.adapters_path)
    for function, adapter_id in functions:
        if adapter_id != function.id:
            registry.register(function.id, registry.get(adapter_id))
        registry.get(function.id)  # fail fast on missing adapters
    return registry


def cmd_collect(args: argparse.Namespace) -> int:
    config = apply_overrides(load_config(args.config), args)
    functions = load_functions(args.functions)
    registry = _build_registry(config, functions)
    verifier = WorkspaceVerifier(registry)
    gateway, params = build_gateway(config)
    pool_path = config.pool_path or "pool.json"

    pool = KnowledgePool(provenance=f"collect {Path(args.functions).name}")
    interrupted = False
    try:
        for event in collect_iter(
            [f for f, _ in functions], gateway, verifier, config.policy, params
        ):
            _print_collection_event(event)
            if event.sample is not None:
                pool, _ = pool_insert(pool, event.sample)
    except KeyboardInterrupt:
        interrupted = True
        print("interrupted; writing partial pool")
    pool_save(pool, pool_path)
    print(f"pool size: {len(pool)}")
    print(f"wrote {pool_path}")
    return EXIT_INTERRUPT if interrupted else EXIT_OK


def _print_collection_event(event: CollectionEvent) -> None:
    if event.error:
        print(f"{event.function.id}: error: {event.error}")
    elif event.collected:
        print(f"{event.function.id}: collected after {event.attempts} attempts")
    else:
        print(f"{event.function.id}: exhausted after {event.attempts} attempts")


def cmd_fix(args: argparse.Namespace) -> int:
    config = apply_overrides(load_config(args.config), args)
    targets = load_functions(args.targets)
    registry = _build_registry(config, targets)
    verifier = WorkspaceVerifier(registry)
    gateway, params = build_gateway(config)
    provider = build_embedder(config)
    if not config.pool_path:
        raise ConfigError("config is missing pool_path")
    pool = pool_load(config.pool_path)

    writer = RecordWriter(config.records_path)
    fixed = 0
    for target, _ in targets:
        result = fix(
            target,
            pool,
            config.strategy,
            gateway,
            verifier,
            config.policy,
            provider=provider,
            seed=config.seed,
            params=params,
        )
        writer.write(
            result_to_record(result, target, config.include_transcripts)
        )
        if result.status is FixStatus.FIXED:
            fixed += 1
        print(
            f"{target.id}: {result.status.value}"
            f" after {result.patches_generated} patches"
            f" in {result.wall_time:.1f}s"
        )
    print(f"fixed {fixed}/{len(targets)}")
    print(f"wrote records to {config.records_path}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    records_path = Path(args.records)
    if not records_path.is_file():
        raise ConfigError(f"records file not found: {records_path}")
    records = read_records(records_path)
    summary = summarize(records)
    lexical = None
    if args.ground_truth:
        truth_path = Path(args.ground_truth)
        if not truth_path.is_file():
            raise ConfigError(f"ground truth file not found: {truth_path}")
        ground_truth = json.loads(truth_path.read_text(encoding="utf-8"))
        lexical = lexical_report(records, ground_truth)
    print(format_report(summary, lexical))
    return EXIT_OK


def cmd_pool_inspect(args: argparse.Namespace) -> int:
    pool = pool_load(args.pool)
    print(f"provenance: {pool.provenance}")
    print(f"embedder: {pool.embedder_id or '(none)'}")
    print(f"samples: {len(pool)}")
    for sample in pool:
        print(
            f"  {sample.buggy.id}: {sample.buggy.language},"
            f" {sample.buggy.line_count} lines,"
            f" attempts_used={sample.attempts_used}"
        )
    return EXIT_OK


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument(
        "--strategy", choices=STRATEGIES, help="override the selection strategy"
    )
    common.add_argument("--mock", help="use a scripted mock backend from this file")
    common.add_argument(
        "--no-transcripts",
        action="store_true",
        help="omit session transcripts from run records",
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="repairloop",
        description="Collect verified repair exemplars and fix bugs with them.",
    )
    common = _common_flags()
    sub = parser.add_subparsers(dest="command", required=True)

    p_collect = sub.add_parser(
        "collect", parents=[common], help="build a knowledge pool from buggy functions"
    )
    p_collect.add_argument("functions", help="functions input file (JSON array)")
    p_collect.set_defaults(handler=cmd_collect)

    p_fix = sub.add_parser(
        "fix", parents=[common], help="repair target functions using the pool"
    )
    p_fix.add_argument("targets", help="targets input file (JSON array)")
    p_fix.set_defaults(handler=cmd_fix)

    p_report = sub.add_parser(
        "report", parents=[common], help="summarize run records"
    )
    p_report.add_argument("records", help="run-record JSONL file")
    p_report.add_argument(
        "--ground-truth", help="JSON map of function id to ground-truth fixed body"
    )
    p_report.set_defaults(handler=cmd_report)

    p_pool = sub.add_parser("pool", parents=[common], help="knowledge pool utilities")
    pool_sub = p_pool.add_subparsers(dest="pool_command", required=True)
    p_inspect = pool_sub.add_parser(
        "inspect", parents=[common], help="print pool contents"
    )
    p_inspect.add_argument("pool", help="pool JSON file")
    p_inspect.set_defaults(handler=cmd_pool_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, PoolSchemaError, RecordSchemaError, InfrastructureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
