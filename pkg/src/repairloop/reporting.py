"""Run-record persistence and evaluation summaries.

Fix results are appended to a JSON-lines file, one object per result.
Reports recompute plausible-fix counts per project, and, given ground
truth, the lexical-match ratio plus a review queue of plausible patches
that still need manual correctness judgment.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .domain import SourceFunction, lexical_match
from .orchestrator import FixResult, FixStatus


class RecordSchemaError(ValueError):
    """A run-record line does not parse; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def project_of(function_id: str) -> str:
    """Project component of a "Project-Number" style id (whole id otherwise)."""
    head, sep, tail = function_id.rpartition("-")
    return head if sep else function_id


def result_to_record(
    result: FixResult,
    target: SourceFunction | None = None,
    include_transcripts: bool = True,
) -> dict:
    """Flatten a fix result (plus target metadata) into one record object."""
    record = {
        "function_id": result.function_id,
        "project": project_of(result.function_id),
        "status": result.status.value,
        "patches_generated": result.patches_generated,
        "wall_time": result.wall_time,
        "scenario": target.scenario if target else None,
        "language": target.language if target else None,
        "winning_patch": None,
        "error": result.error,
        "sessions": [
            s.to_dict(include_messages=include_transcripts) for s in result.sessions
        ],
    }
    if result.winning_patch is not None:
        patch = result.winning_patch
        record["winning_patch"] = {
            "body": patch.body,
            "session_index": patch.session_index,
            "interaction_index": patch.interaction_index,
        }
    return record


class RecordWriter:
    """Append-only, thread-safe JSON-lines writer."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def write(self, record: dict) -> None:
        line = json.dumps(record)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")


def read_records(path: str | Path) -> list[dict]:
    records = []
    text = Path(path).read_text(encoding="utf-8")
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RecordSchemaError(line_number, f"invalid JSON: {exc}") from exc
        if not isinstance(record, dict) or "function_id" not in record or "status" not in record:
            raise RecordSchemaError(
                line_number, "record must be an object with function_id and status"
            )
        records.append(record)
    return records


@dataclass
class RunSummary:
    total: int = 0
    by_status: dict = field(default_factory=dict)
    plausible_by_project: dict = field(default_factory=dict)
    plausible_by_scenario: dict = field(default_factory=dict)
    patches_generated: int = 0
    wall_time: float = 0.0

    @property
    def plausible(self) -> int:
        return self.by_status.get(FixStatus.FIXED.value, 0)


def summarize(records: list[dict]) -> RunSummary:
    summary = RunSummary()
    for record in records:
        summary.total += 1
        status = record["status"]
        summary.by_status[status] = summary.by_status.get(status, 0) + 1
        summary.patches_generated += record.get("patches_generated", 0)
        summary.wall_time += record.get("wall_time", 0.0)
        if status == FixStatus.FIXED.value:
            project = record.get("project") or project_of(record["function_id"])
            summary.plausible_by_project[project] = (
                summary.plausible_by_project.get(project, 0) + 1
            )
            scenario = record.get("scenario")
            if scenario:
                summary.plausible_by_scenario[scenario] = (
                    summary.plausible_by_scenario.get(scenario, 0) + 1
                )
    return summary


@dataclass
class LexicalReport:
    plausible: int
    matches: int
    matched_ids: list[str]
    review_queue: list[str]  # plausible but lexically different: judge by hand
    missing_ground_truth: list[str]

    @property
    def ratio_text(self) -> str:
        if not self.plausible:
            return "0/0"
        percent = 100.0 * self.matches / self.plausible
        return f"{self.matches}/{self.plausible} ({percent:.1f}%)"


def lexical_report(records: list[dict], ground_truth: dict[str, str]) -> LexicalReport:
    """Compare winning patches against ground-truth fixed bodies."""
    plausible = 0
    matched: list[str] = []
    review: list[str] = []
    missing: list[str] = []
    for record in records:
        if record["status"] != FixStatus.FIXED.value:
            continue
        plausible += 1
        function_id = record["function_id"]
        patch = record.get("winning_patch") or {}
        body = patch.get("body")
        truth = ground_truth.get(function_id)
        if not body or truth is None:
            missing.append(function_id)
            review.append(function_id)
            continue
        if lexical_match(body, truth):
            matched.append(function_id)
        else:
            review.append(function_id)
    return LexicalReport(
        plausible=plausible,
        matches=len(matched),
        matched_ids=matched,
        review_queue=review,
        missing_ground_truth=missing,
    )


def format_report(
    summary: RunSummary, lexical: LexicalReport | None = None
) -> str:
    """Human-readable report text printed by the CLI."""
    lines = [
        f"runs: {summary.total}",
        f"plausible fixes: {summary.plausible}",
        f"patches generated: {summary.patches_generated}",
        f"total wall time: {summary.wall_time:.1f}s",
    ]
    for status, count in sorted(summary.by_status.items()):
        lines.append(f"  status {status}: {count}")
    if summary.plausible_by_project:
        lines.append("plausible fixes by project:")
        for project, count in sorted(summary.plausible_by_project.items()):
            lines.append(f"  {project}: {count}")
    if summary.plausible_by_scenario:
        lines.append("plausible fixes by scenario:")
        for scenario, count in sorted(summary.plausible_by_scenario.items()):
            lines.append(f"  {scenario}: {count}")
    if lexical is not None:
        lines.append(f"lexical matches: {lexical.ratio_text}")
        if lexical.review_queue:
            lines.append(
                f"review queue ({len(lexical.review_queue)} plausible patches"
                " pending manual correctness judgment):"
            )
            for function_id in lexical.review_queue:
                lines.append(f"  {function_id}")
    return "\n".join(lines)
