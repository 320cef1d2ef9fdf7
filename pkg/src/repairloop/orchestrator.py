"""The two repair loops.

Collection: prompt for a fix up to 25 times per bug in fresh single-turn
sessions, keeping the first verified (function, chain of thought, fix)
triple. Fixing: up to 25 independent sessions of up to 5 interactions
each, feeding the failure category back into the conversation after every
failed verification.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Callable, Iterable, Iterator, Protocol, Sequence

from .domain import (
    CandidatePatch,
    CoTSample,
    KnowledgePool,
    Message,
    SourceFunction,
    pool_insert,
)
from .gateway import (
    ChatBackend,
    ChatSession,
    EmbeddingProvider,
    GenerationParams,
    ProviderRejectionError,
    TransportError,
    chat_complete,
)
from .prompts import (
    ExtractionNote,
    PromptBudgetError,
    build_collection_prompt,
    build_feedback_turn,
    build_fixing_prompt,
    build_fixing_prompt_within_budget,
    parse_response,
)
from .selection import (
    SelectionResult,
    select_cluster_cosine,
    select_ir,
    select_random,
)
from .verify import (
    InfrastructureError,
    OutcomeKind,
    VerificationOutcome,
    format_failure_message,
)

logger = logging.getLogger(__name__)

STRATEGIES = ("contrastive", "semantic", "ir", "random")

# Fed back when the model returned no extractable function at all.
NO_CANDIDATE_FEEDBACK = "Syntax Error"


class Verifier(Protocol):
    def verify(
        self, function: SourceFunction, candidate_body: str
    ) -> VerificationOutcome:
        """Apply the candidate and run the project's suite."""


@dataclass(frozen=True)
class BudgetPolicy:
    """Hard generation budgets for both phases.

    ``max_sessions * max_interactions`` bounds the candidate patches per bug
    (125 under defaults).
    """

    max_collection_attempts: int = 25
    max_sessions: int = 25
    max_interactions: int = 5
    shots: int = 2
    end_to_end_timeout: float = 5 * 3600.0

    def __post_init__(self):
        for name in ("max_collection_attempts", "max_sessions", "max_interactions", "shots"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def max_candidate_patches(self) -> int:
        return self.max_sessions * self.max_interactions


class FixStatus(Enum):
    FIXED = "Fixed"
    EXHAUSTED = "Exhausted"
    TIMED_OUT = "TimedOut"
    INFRASTRUCTURE_ERROR = "InfrastructureError"


@dataclass
class InteractionRecord:
    """One generate-verify cycle inside a session."""

    index: int
    extraction: str  # ExtractionNote value
    outcome_kind: str | None  # OutcomeKind value; None when nothing to verify
    feedback_message: str | None  # message fed back, None on pass or session end
    passed: bool = False

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "extraction": self.extraction,
            "outcome_kind": self.outcome_kind,
            "feedback_message": self.feedback_message,
            "passed": self.passed,
        }


@dataclass
class SessionRecord:
    index: int
    messages: list[Message]
    interactions: list[InteractionRecord] = field(default_factory=list)

    def to_dict(self, include_messages: bool = True) -> dict:
        record = {
            "index": self.index,
            "interactions": [i.to_dict() for i in self.interactions],
        }
        if include_messages:
            record["messages"] = [m.to_dict() for m in self.messages]
        return record


@dataclass
class FixResult:
    """Terminal record of one fixing run."""

    function_id: str
    status: FixStatus
    winning_patch: CandidatePatch | None
    sessions: list[SessionRecord]
    patches_generated: int
    wall_time: float
    error: str | None = None


@dataclass
class CollectionEvent:
    """Per-function outcome of the collection loop, for logs and the CLI."""

    function: SourceFunction
    sample: CoTSample | None
    attempts: int
    error: str | None = None

    @property
    def collected(self) -> bool:
        return self.sample is not None


def _utc_stamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def collect_iter(
    functions: Iterable[SourceFunction],
    gateway: ChatBackend,
    verifier: Verifier,
    policy: BudgetPolicy = BudgetPolicy(),
    params: GenerationParams | None = None,
    comment_prefix: str | None = None,
) -> Iterator[CollectionEvent]:
    """Run the collection loop one function at a time.

    An infrastructure failure aborts only the current function; the event
    records the error and iteration continues.
    """
    params = params or GenerationParams()
    for function in functions:
        try:
            sample, attempts = _collect_one(
                function, gateway, verifier, policy, params, comment_prefix
            )
            yield CollectionEvent(function, sample, attempts)
        except (InfrastructureError, TransportError, ProviderRejectionError) as exc:
            logger.warning("collection aborted for %s: %s", function.id, exc)
            yield CollectionEvent(function, None, 0, error=str(exc))


def _collect_one(
    function: SourceFunction,
    gateway: ChatBackend,
    verifier: Verifier,
    policy: BudgetPolicy,
    params: GenerationParams,
    comment_prefix: str | None,
) -> tuple[CoTSample | None, int]:
    prompt = build_collection_prompt(function, comment_prefix)
    for attempt in range(1, policy.max_collection_attempts + 1):
        session = ChatSession(f"{function.id}/{attempt}")
        session.extend(prompt)
        text = chat_complete(gateway, session, params)
        parsed = parse_response(text)
        if parsed.candidate_body is None:
            continue
        outcome = verifier.verify(function, parsed.candidate_body)
        if outcome.kind is not OutcomeKind.PASS:
            continue
        try:
            sample = CoTSample(
                buggy=function,
                chain_of_thought=parsed.chain_of_thought,
                fixed_body=parsed.candidate_body,
                attempts_used=attempt,
                verified=True,
            )
        except ValueError as exc:
            # e.g. a "fix" identical to the bug, or an empty chain of
            # thought; not admissible even though the suite passed.
            logger.info("discarding unusable sample for %s: %s", function.id, exc)
            continue
        return sample, attempt
    return None, policy.max_collection_attempts


def collect(
    functions: Sequence[SourceFunction],
    gateway: ChatBackend,
    verifier: Verifier,
    policy: BudgetPolicy = BudgetPolicy(),
    params: GenerationParams | None = None,
    comment_prefix: str | None = None,
    provenance: str | None = None,
    log: list[CollectionEvent] | None = None,
) -> KnowledgePool:
    """Build a knowledge pool from every function that yields a verified fix."""
    pool = KnowledgePool(
        samples=(),
        provenance=provenance or f"collection run {_utc_stamp()}",
    )
    for event in collect_iter(functions, gateway, verifier, policy, params, comment_prefix):
        if log is not None:
            log.append(event)
        if event.sample is not None:
            pool, duplicate = pool_insert(pool, event.sample)
            if duplicate:
                logger.info("duplicate sample for %s ignored", event.function.id)
    return pool


def fix(
    target: SourceFunction,
    pool: KnowledgePool,
    strategy: str,
    gateway: ChatBackend,
    verifier: Verifier,
    policy: BudgetPolicy = BudgetPolicy(),
    provider: EmbeddingProvider | None = None,
    seed: int = 0,
    params: GenerationParams | None = None,
    comment_prefix: str | None = None,
    embedding_cache: dict | None = None,
    clock: Callable[[], float] = time.monotonic,
) -> FixResult:
    """Repair one function using exemplars selected from the pool.

    Deterministic strategies select once and reuse the exemplars across all
    sessions; random selection re-draws per session from seed XOR session
    index.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    shots = policy.shots
    if strategy in ("contrastive", "semantic"):
        if provider is None:
            raise ValueError(f"strategy {strategy!r} needs an embedding provider")
        fixed = select_cluster_cosine(
            pool, target, provider, shots=shots, seed=seed, cache=embedding_cache
        )
        _warn_degenerate(fixed, target)
        picker = _constant_picker(fixed)
    elif strategy == "ir":
        ranked = select_ir(pool, target, shots=shots)
        _warn_degenerate(ranked, target)
        picker = _constant_picker(ranked)
    else:
        def picker(session_index: int) -> Sequence[CoTSample]:
            result = select_random(pool, shots=shots, seed=seed ^ session_index)
            _warn_degenerate(result, target)
            return result.samples

    return _fix_loop(target, picker, gateway, verifier, policy, params, comment_prefix, clock)


def fix_with_manual_exemplars(
    target: SourceFunction,
    exemplars: Sequence[CoTSample],
    gateway: ChatBackend,
    verifier: Verifier,
    policy: BudgetPolicy = BudgetPolicy(),
    params: GenerationParams | None = None,
    comment_prefix: str | None = None,
    clock: Callable[[], float] = time.monotonic,
) -> FixResult:
    """Fixing loop with hand-supplied exemplars, bypassing pool selection."""
    if not exemplars:
        raise ValueError("manual exemplars must be non-empty")
    exemplars = tuple(exemplars)
    return _fix_loop(
        target, lambda _: exemplars, gateway, verifier, policy, params, comment_prefix, clock
    )


def _constant_picker(
    result: SelectionResult,
) -> Callable[[int], Sequence[CoTSample]]:
    return lambda _session_index: result.samples


def _warn_degenerate(result: SelectionResult, target: SourceFunction) -> None:
    if result.degenerate:
        logger.warning(
            "%s: pool smaller than shot count; using all %d samples",
            target.id,
            len(result.samples),
        )


def _fix_loop(
    target: SourceFunction,
    picker: Callable[[int], Sequence[CoTSample]],
    gateway: ChatBackend,
    verifier: Verifier,
    policy: BudgetPolicy,
    params: GenerationParams | None,
    comment_prefix: str | None,
    clock: Callable[[], float],
) -> FixResult:
    params = params or GenerationParams()
    start = clock()
    deadline = start + policy.end_to_end_timeout
    sessions: list[SessionRecord] = []
    patches_generated = 0

    def result(
        status: FixStatus,
        winning: CandidatePatch | None = None,
        error: str | None = None,
    ) -> FixResult:
        return FixResult(
            function_id=target.id,
            status=status,
            winning_patch=winning,
            sessions=sessions,
            patches_generated=patches_generated,
            wall_time=clock() - start,
            error=error,
        )

    try:
        for session_index in range(1, policy.max_sessions + 1):
            exemplars = picker(session_index)
            if params.max_prompt_chars is not None:
                prompt, _ = build_fixing_prompt_within_budget(
                    exemplars, target, comment_prefix, params.max_prompt_chars
                )
            else:
                prompt = build_fixing_prompt(exemplars, target, comment_prefix)
            session = ChatSession(f"{target.id}/{session_index}")
            session.extend(prompt)
            record = SessionRecord(index=session_index, messages=session.messages)
            sessions.append(record)

            for interaction in range(1, policy.max_interactions + 1):
                # The timeout is checked between interactions; a generation
                # already in flight is allowed to finish.
                if clock() >= deadline:
                    return result(FixStatus.TIMED_OUT)
                text = chat_complete(gateway, session, params)
                patches_generated += 1
                parsed = parse_response(text)
                last = interaction == policy.max_interactions

                if parsed.candidate_body is None:
                    feedback = None if last else NO_CANDIDATE_FEEDBACK
                    record.interactions.append(
                        InteractionRecord(
                            interaction, parsed.extraction_note.value, None, feedback
                        )
                    )
                    if feedback:
                        session.append(build_feedback_turn(feedback))
                    continue

                candidate = CandidatePatch(
                    function_id=target.id,
                    body=parsed.candidate_body,
                    session_index=session_index,
                    interaction_index=interaction,
                    raw_response=text,
                )
                outcome = verifier.verify(target, candidate.body)
                if outcome.kind is OutcomeKind.PASS:
                    record.interactions.append(
                        InteractionRecord(
                            interaction,
                            parsed.extraction_note.value,
                            outcome.kind.value,
                            None,
                            passed=True,
                        )
                    )
                    return result(FixStatus.FIXED, winning=candidate)

                feedback = None if last else format_failure_message(outcome)
                record.interactions.append(
                    InteractionRecord(
                        interaction,
                        parsed.extraction_note.value,
                        outcome.kind.value,
                        feedback,
                    )
                )
                if feedback:
                    session.append(build_feedback_turn(feedback))
        return result(FixStatus.EXHAUSTED)
    except (
        InfrastructureError,
        TransportError,
        ProviderRejectionError,
        PromptBudgetError,
    ) as exc:
        logger.error("%s: infrastructure failure: %s", target.id, exc)
        return result(FixStatus.INFRASTRUCTURE_ERROR, error=str(exc))


def fix_many(
    targets: Sequence[SourceFunction],
    pool: KnowledgePool,
    strategy: str,
    gateway: ChatBackend,
    verifier: Verifier,
    policy: BudgetPolicy = BudgetPolicy(),
    provider: EmbeddingProvider | None = None,
    seed: int = 0,
    params: GenerationParams | None = None,
    workers: int | None = None,
    embedding_cache: dict | None = None,
    on_result: Callable[[SourceFunction, FixResult], None] | None = None,
) -> list[FixResult]:
    """Fix a batch of bugs with a bounded worker group.

    Each bug runs strictly sequentially within itself; distinct bugs may run
    in parallel. Results are returned in target order; ``on_result`` fires as
    each bug finishes (callers serialize their own writes).
    """
    workers = workers or os.cpu_count() or 1

    def run(target: SourceFunction) -> FixResult:
        return fix(
            target,
            pool,
            strategy,
            gateway,
            verifier,
            policy,
            provider=provider,
            seed=seed,
            params=params,
            embedding_cache=embedding_cache,
        )

    if workers == 1 or len(targets) <= 1:
        results = []
        for target in targets:
            outcome = run(target)
            results.append(outcome)
            if on_result:
                on_result(target, outcome)
        return results

    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(run, t): t for t in targets}
        collected = {}
        for future, target in futures.items():
            outcome = future.result()
            collected[target.id] = outcome
            if on_result:
                on_result(target, outcome)
    return [collected[t.id] for t in targets]
