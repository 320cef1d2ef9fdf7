"""Prompt construction and model-response parsing.

Builds the collection-phase and fixing-phase prompts, the feedback turn
appended after a failed verification, and splits model output into a
chain of thought plus a candidate function body.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .domain import CoTSample, Message, SourceFunction

ROLE_DESIGNATION = "You are an Automated Program Repair tool"
TASK_DESCRIPTION = "Provide a fix for the buggy function"
BUGGY_HEADER = "Buggy Function"
FIXED_HEADER = "Fixed Function"
COT_INDICATOR = "Let's think step by step"
FAULT_MARK = "buggy line"

FEEDBACK_TEMPLATE = (
    "The fixed version is still not correct. {message}."
    " Please fix it again. Let's think step by step."
)

COMMENT_PREFIXES = {"java": "//", "python": "#"}

_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)
_BRACE_SIGNATURE_RE = re.compile(r"^\s*[\w<>\[\],.$?\s]+\([^;{}]*\)\s*\{?\s*$")
_DEF_SIGNATURE_RE = re.compile(r"^(\s*)def\s+\w+\s*\(")


class UnsupportedLanguageError(ValueError):
    """No comment prefix is known for the language and none was supplied."""


class EmptyExemplarsError(ValueError):
    """The fixing phase is few-shot; it cannot run without exemplars."""


class PromptBudgetError(RuntimeError):
    """The prompt cannot fit the backend budget even with zero exemplars."""


class ExtractionNote(Enum):
    FENCED_BLOCK = "fenced_block"
    HEURISTIC_SPAN = "heuristic_span"
    NONE_FOUND = "none_found"


@dataclass(frozen=True)
class ParsedResponse:
    """Model output split into reasoning text and an optional code body."""

    chain_of_thought: str
    candidate_body: str | None
    extraction_note: ExtractionNote

    def __post_init__(self):
        has_body = self.candidate_body is not None
        if has_body == (self.extraction_note is ExtractionNote.NONE_FOUND):
            raise ValueError("candidate_body present iff extraction succeeded")


@dataclass(frozen=True)
class PromptComponents:
    """Pre-rendered prompt pieces, in the order they appear in the prompt.

    ``exemplars`` holds (buggy_block, chain_of_thought, fixed_block) triples
    and is empty in the collection phase.
    """

    role_designation: str
    task_description: str
    buggy_block: str
    cot_indicator: str = COT_INDICATOR
    exemplars: tuple[tuple[str, str, str], ...] = ()

    def to_messages(self) -> list[Message]:
        parts = []
        for buggy_block, chain_of_thought, fixed_block in self.exemplars:
            parts.append(f"{buggy_block}\n{chain_of_thought}\n{fixed_block}")
        parts.append(
            f"{self.task_description}\n\n{self.buggy_block}\n\n{self.cot_indicator}"
        )
        return [
            Message("system", self.role_designation),
            Message("user", "\n\n".join(parts)),
        ]


def comment_prefix_for(language: str, override: str | None = None) -> str:
    if override is not None:
        return override
    try:
        return COMMENT_PREFIXES[language]
    except KeyError:
        raise UnsupportedLanguageError(
            f"no comment prefix known for language {language!r}"
        ) from None


def mark_fault_lines(function: SourceFunction, prefix: str) -> str:
    """Render the body, suffixing each known-faulty line with an inline marker."""
    if not function.fault_lines:
        return function.body
    lines = function.body.splitlines()
    for index in function.fault_lines:
        lines[index - 1] = f"{lines[index - 1]} {prefix} {FAULT_MARK}"
    return "\n".join(lines)


def collection_components(
    function: SourceFunction, comment_prefix: str | None = None
) -> PromptComponents:
    prefix = comment_prefix_for(function.language, comment_prefix)
    return PromptComponents(
        role_designation=ROLE_DESIGNATION,
        task_description=f"{prefix} {TASK_DESCRIPTION}",
        buggy_block=f"{prefix} {BUGGY_HEADER}\n{mark_fault_lines(function, prefix)}",
    )


def build_collection_prompt(
    function: SourceFunction, comment_prefix: str | None = None
) -> list[Message]:
    """System turn plus the single zero-shot user turn of the collection phase."""
    return collection_components(function, comment_prefix).to_messages()


def _exemplar_block(sample: CoTSample, prefix: str) -> tuple[str, str, str]:
    return (
        f"{prefix} {BUGGY_HEADER}\n{sample.buggy.body}",
        sample.chain_of_thought,
        f"{prefix} {FIXED_HEADER}\n{sample.fixed_body}",
    )


def fixing_components(
    exemplars: Sequence[CoTSample],
    target: SourceFunction,
    comment_prefix: str | None = None,
) -> PromptComponents:
    if not exemplars:
        raise EmptyExemplarsError("fixing prompts require at least one exemplar")
    for sample in exemplars:
        if not sample.verified:
            raise ValueError(f"{sample.buggy.id}: exemplar is not verified")
    prefix = comment_prefix_for(target.language, comment_prefix)
    base = collection_components(target, comment_prefix)
    return PromptComponents(
        role_designation=base.role_designation,
        task_description=base.task_description,
        buggy_block=base.buggy_block,
        exemplars=tuple(_exemplar_block(s, prefix) for s in exemplars),
    )


def build_fixing_prompt(
    exemplars: Sequence[CoTSample],
    target: SourceFunction,
    comment_prefix: str | None = None,
) -> list[Message]:
    """Few-shot fixing prompt: worked exemplars followed by the target function."""
    return fixing_components(exemplars, target, comment_prefix).to_messages()


def build_fixing_prompt_within_budget(
    exemplars: Sequence[CoTSample],
    target: SourceFunction,
    comment_prefix: str | None = None,
    max_chars: int | None = None,
) -> tuple[list[Message], list[CoTSample]]:
    """Fixing prompt trimmed to a character budget.

    Exemplars are dropped from the end one at a time until the rendered
    prompt fits; with zero exemplars the target is rendered alone. Raises
    ``PromptBudgetError`` if even that does not fit. Collection prompts are
    never trimmed, so no analogue exists for them.
    """
    kept = list(exemplars)
    while True:
        if kept:
            messages = build_fixing_prompt(kept, target, comment_prefix)
        else:
            messages = build_collection_prompt(target, comment_prefix)
        if max_chars is None or sum(len(m.content) for m in messages) <= max_chars:
            return messages, kept
        if not kept:
            raise PromptBudgetError(
                f"{target.id}: prompt exceeds {max_chars} chars with zero exemplars"
            )
        kept.pop()


def build_feedback_turn(failure_message: str) -> Message:
    """The user turn appended after a failed verification."""
    if not failure_message:
        raise ValueError("failure_message must be non-empty")
    return Message("user", FEEDBACK_TEMPLATE.format(message=failure_message))


def parse_response(text: str) -> ParsedResponse:
    """Split a model response into chain of thought and candidate body.

    The candidate is the content of the last fenced code block (models often
    echo the buggy code first, so the fix conventionally comes last). Without
    fences, the longest heuristic function span is used. ``none_found`` is a
    value, not an error; the orchestrator treats it as a failed interaction.
    """
    if not text:
        raise ValueError("cannot parse an empty response")
    matches = list(_FENCE_RE.finditer(text))
    if matches:
        match = matches[-1]
        body = match.group(1).rstrip("\n")
        if body.strip():
            cot = (text[: match.start()] + text[match.end() :]).strip()
            return ParsedResponse(cot, body, ExtractionNote.FENCED_BLOCK)
    span = _heuristic_span(text)
    if span is not None:
        start, end = span
        body = text[start:end].rstrip("\n")
        cot = (text[:start] + text[end:]).strip()
        return ParsedResponse(cot, body, ExtractionNote.HEURISTIC_SPAN)
    return ParsedResponse(text.strip(), None, ExtractionNote.NONE_FOUND)


def _heuristic_span(text: str) -> tuple[int, int] | None:
    """Longest region starting at a function signature and ending at closure."""
    lines = text.splitlines(keepends=True)
    offsets = [0]
    for line in lines:
        offsets.append(offsets[-1] + len(line))
    best: tuple[int, int] | None = None
    for i, line in enumerate(lines):
        end = _brace_region_end(lines, i) or _def_region_end(lines, i)
        if end is None:
            continue
        span = (offsets[i], offsets[end])
        if best is None or span[1] - span[0] > best[1] - best[0]:
            best = span
    return best


def _brace_region_end(lines: list[str], start: int) -> int | None:
    """End line (exclusive) of a balanced {} block opened by a signature line."""
    if not _BRACE_SIGNATURE_RE.match(lines[start]) or "(" not in lines[start]:
        return None
    depth = 0
    opened = False
    for j in range(start, len(lines)):
        for ch in lines[j]:
            if ch == "{":
                depth += 1
                opened = True
            elif ch == "}":
                depth -= 1
        if opened and depth == 0:
            return j + 1
        if not opened and j > start + 1:
            return None  # signature never opened a block
    return None


def _def_region_end(lines: list[str], start: int) -> int | None:
    """End line (exclusive) of a Python def block, by indentation."""
    match = _DEF_SIGNATURE_RE.match(lines[start])
    if not match:
        return None
    indent = len(match.group(1))
    end = start + 1
    for j in range(start + 1, len(lines)):
        stripped = lines[j].strip()
        if not stripped:
            end = j + 1
            continue
        if len(lines[j]) - len(lines[j].lstrip()) <= indent:
            break
        end = j + 1
    while end > start + 1 and not lines[end - 1].strip():
        end -= 1
    return end if end > start else None
