"""Core data types for the repair pipeline.

Source functions, verified chain-of-thought samples, the knowledge pool
and its on-disk JSON format, plus the whitespace-insensitive lexical
match used for evaluating patches against ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

SCENARIOS = ("single_function", "single_hunk", "single_line")

# On-disk field order for pool files; also the validation order, so schema
# errors always name the first offending field.
_POOL_FIELDS = ("provenance", "embedder_id", "samples")
_SAMPLE_FIELDS = (
    "id",
    "language",
    "buggy_body",
    "fault_lines",
    "chain_of_thought",
    "fixed_body",
    "attempts_used",
)


class PoolSchemaError(ValueError):
    """A pool file violates the schema; ``field`` names the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class UnverifiedSampleError(ValueError):
    """Unverified data must never enter the pool; hitting this is a pipeline bug."""


def normalize_code(text: str) -> str:
    """Whitespace-insensitive canonical form of a code snippet.

    Each line has its whitespace runs collapsed to single spaces (leading
    and trailing whitespace dropped), and blank lines are removed.
    Comment text is deliberately kept: two snippets that differ only in
    comments do not normalize equal.
    """
    lines = (" ".join(line.split()) for line in text.splitlines())
    return "\n".join(line for line in lines if line)


def lexical_match(candidate_body: str, ground_truth_body: str) -> bool:
    """True iff the two function bodies are equal after ``normalize_code``."""
    if not candidate_body or not ground_truth_body:
        raise ValueError("lexical_match requires two non-empty function bodies")
    return normalize_code(candidate_body) == normalize_code(ground_truth_body)


@dataclass(frozen=True)
class Message:
    """One role-tagged chat turn."""

    role: str  # "system" | "user" | "assistant"
    content: str

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class SourceFunction:
    """A buggy (or fixed) function body plus identity and fault metadata.

    ``fault_lines`` holds 1-based line indices into ``body`` when
    statement-level fault information is available. ``scenario`` is input
    metadata (single_function / single_hunk / single_line), never inferred.
    """

    id: str
    language: str
    body: str
    fault_lines: frozenset[int] | None = None
    scenario: str | None = None

    def __post_init__(self):
        if not self.body:
            raise ValueError(f"{self.id}: function body must be non-empty")
        if self.scenario is not None and self.scenario not in SCENARIOS:
            raise ValueError(f"{self.id}: unknown scenario {self.scenario!r}")
        if self.fault_lines is not None:
            object.__setattr__(self, "fault_lines", frozenset(self.fault_lines))
            line_count = len(self.body.splitlines())
            bad = sorted(i for i in self.fault_lines if not 1 <= i <= line_count)
            if bad:
                raise ValueError(
                    f"{self.id}: fault lines {bad} outside [1, {line_count}]"
                )

    @property
    def line_count(self) -> int:
        return len(self.body.splitlines())


@dataclass(frozen=True)
class CoTSample:
    """A (buggy function, chain of thought, fixed function) triple.

    ``verified`` records that the fixed body passed the project's full test
    suite; only verified samples are admitted to a pool.
    """

    buggy: SourceFunction
    chain_of_thought: str
    fixed_body: str
    attempts_used: int = 1
    verified: bool = False

    def __post_init__(self):
        if not self.chain_of_thought.strip():
            raise ValueError(f"{self.buggy.id}: chain_of_thought must be non-empty")
        if not self.fixed_body.strip():
            raise ValueError(f"{self.buggy.id}: fixed_body must be non-empty")
        if self.attempts_used < 1:
            raise ValueError(f"{self.buggy.id}: attempts_used must be >= 1")
        if normalize_code(self.fixed_body) == normalize_code(self.buggy.body):
            raise ValueError(
                f"{self.buggy.id}: fixed body is identical to the buggy body"
            )

    @property
    def dedupe_key(self) -> tuple[str, str]:
        return (self.buggy.id, normalize_code(self.fixed_body))


@dataclass(frozen=True)
class KnowledgePool:
    """Ordered, duplicate-free collection of verified samples."""

    samples: tuple[CoTSample, ...] = ()
    provenance: str = ""
    embedder_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        seen: set[tuple[str, str]] = set()
        for sample in self.samples:
            if not sample.verified:
                raise UnverifiedSampleError(
                    f"{sample.buggy.id}: unverified sample in pool"
                )
            key = sample.dedupe_key
            if key in seen:
                raise ValueError(f"duplicate sample for {key[0]}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[CoTSample]:
        return iter(self.samples)


def pool_insert(pool: KnowledgePool, sample: CoTSample) -> tuple[KnowledgePool, bool]:
    """Insert a verified sample, keeping the first copy of any duplicate.

    Returns ``(pool, duplicate)``; on a duplicate the original pool is
    returned unchanged with the flag set.
    """
    if not sample.verified:
        raise UnverifiedSampleError(
            f"{sample.buggy.id}: refusing to insert an unverified sample"
        )
    key = sample.dedupe_key
    if any(existing.dedupe_key == key for existing in pool.samples):
        return pool, True
    return replace(pool, samples=pool.samples + (sample,)), False


def pool_save(pool: KnowledgePool, path: str | Path) -> None:
    """Write the pool as UTF-8 JSON, preserving sample order."""
    payload = {
        "provenance": pool.provenance,
        "embedder_id": pool.embedder_id,
        "samples": [
            {
                "id": s.buggy.id,
                "language": s.buggy.language,
                "buggy_body": s.buggy.body,
                "fault_lines": sorted(s.buggy.fault_lines)
                if s.buggy.fault_lines is not None
                else None,
                "chain_of_thought": s.chain_of_thought,
                "fixed_body": s.fixed_body,
                "attempts_used": s.attempts_used,
            }
            for s in pool.samples
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def pool_load(path: str | Path) -> KnowledgePool:
    """Load a pool file, validating the schema field by field."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PoolSchemaError("<document>", f"not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise PoolSchemaError("<document>", "top level must be an object")

    provenance = _expect(raw, "provenance", str)
    embedder_id = _expect(raw, "embedder_id", str, nullable=True)
    samples_raw = _expect(raw, "samples", list)

    samples = []
    for i, entry in enumerate(samples_raw):
        prefix = f"samples[{i}]"
        if not isinstance(entry, dict):
            raise PoolSchemaError(prefix, "sample must be an object")
        sid = _expect(entry, "id", str, prefix=prefix)
        language = _expect(entry, "language", str, prefix=prefix)
        buggy_body = _expect(entry, "buggy_body", str, prefix=prefix)
        fault_lines = _expect(entry, "fault_lines", list, prefix=prefix, nullable=True)
        if fault_lines is not None and not all(
            isinstance(x, int) and not isinstance(x, bool) for x in fault_lines
        ):
            raise PoolSchemaError(f"{prefix}.fault_lines", "must be a list of ints")
        cot = _expect(entry, "chain_of_thought", str, prefix=prefix)
        fixed_body = _expect(entry, "fixed_body", str, prefix=prefix)
        attempts = _expect(entry, "attempts_used", int, prefix=prefix)
        try:
            buggy = SourceFunction(
                id=sid,
                language=language,
                body=buggy_body,
                fault_lines=frozenset(fault_lines) if fault_lines is not None else None,
            )
            samples.append(
                CoTSample(
                    buggy=buggy,
                    chain_of_thought=cot,
                    fixed_body=fixed_body,
                    attempts_used=attempts,
                    verified=True,
                )
            )
        except ValueError as exc:
            raise PoolSchemaError(prefix, str(exc)) from exc
    try:
        return KnowledgePool(
            samples=tuple(samples), provenance=provenance, embedder_id=embedder_id
        )
    except ValueError as exc:
        raise PoolSchemaError("samples", str(exc)) from exc


def _expect(obj: dict, key: str, kind: type, prefix: str = "", nullable: bool = False):
    name = f"{prefix}.{key}" if prefix else key
    if key not in obj:
        raise PoolSchemaError(name, "missing required field")
    value = obj[key]
    if value is None:
        if nullable:
            return None
        raise PoolSchemaError(name, "must not be null")
    if kind is int and isinstance(value, bool):
        raise PoolSchemaError(name, "expected int, got bool")
    if not isinstance(value, kind):
        raise PoolSchemaError(
            name, f"expected {kind.__name__}, got {type(value).__name__}"
        )
    return value


@dataclass(frozen=True)
class CandidatePatch:
    """One candidate fixed function extracted from a model response."""

    function_id: str
    body: str
    session_index: int
    interaction_index: int
    raw_response: str

    def __post_init__(self):
        if not self.body.strip():
            raise ValueError(f"{self.function_id}: candidate body must be non-empty")
        if self.session_index < 1 or self.interaction_index < 1:
            raise ValueError(f"{self.function_id}: indices are 1-based")
