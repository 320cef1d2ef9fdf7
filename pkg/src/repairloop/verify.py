"""Workspace patching, sandboxed test execution, and outcome classification.

Applies a candidate function body into an isolated copy of the project,
runs the configured syntax/compile/test commands under a timeout, and
classifies the result as a pass or one of the four feedback categories:
Compile Fail, Time Out, Syntax Error, Failing test.
"""

from __future__ import annotations

import json
import os
import re
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from .domain import SourceFunction, normalize_code

DETAIL_LIMIT = 2000
DEFAULT_TIMEOUT_SECS = 300.0

# Shipped failure patterns for two common test-runner output styles.
SIMPLE_FAIL_PATTERN = r"FAIL\s+([\w.]+)::(\w+)"
PYTEST_FAIL_PATTERN = r"FAILED\s+([\w/.]+)::(\w+)"
DEFAULT_FAIL_PATTERN = SIMPLE_FAIL_PATTERN

# Compiler diagnostics that indicate a parse error rather than a plain
# compile failure (for toolchains without a separate syntax-check step).
DEFAULT_SYNTAX_PATTERNS = (r"error:.*expected", r"SyntaxError")

DEFAULT_ENV_ALLOWLIST = ("PATH", "HOME", "LANG", "LC_ALL", "PYTHONPATH", "TMPDIR")


class InfrastructureError(RuntimeError):
    """The harness itself failed (missing command, bad adapter); this is not
    a verification category and must never be fed back to the model."""


class LocatorMismatchError(InfrastructureError):
    """The configured function span no longer matches the registered body."""


class OutcomeKind(Enum):
    PASS = "Pass"
    COMPILE_FAIL = "CompileFail"
    TIMEOUT = "Timeout"
    SYNTAX_ERROR = "SyntaxError"
    FAILING_TEST = "FailingTest"


@dataclass(frozen=True)
class VerificationOutcome:
    kind: OutcomeKind
    failing_class: str | None = None
    failing_test: str | None = None
    detail: str = ""

    def __post_init__(self):
        has_names = self.failing_class is not None and self.failing_test is not None
        if has_names != (self.kind is OutcomeKind.FAILING_TEST):
            raise ValueError("failing_class/failing_test present iff FailingTest")
        if len(self.detail) > DETAIL_LIMIT:
            object.__setattr__(self, "detail", self.detail[:DETAIL_LIMIT])


@dataclass(frozen=True)
class StepResult:
    """Raw result of one spawned command."""

    exit_code: int
    output: str
    timed_out: bool = False


@dataclass(frozen=True)
class ProjectAdapter:
    """How to patch and exercise one project workspace.

    ``function_span`` is the 1-based inclusive line range of the buggy
    function within ``target_file``. ``fail_pattern`` must expose two capture
    groups (test class, test function); test frameworks format failures
    differently, so this is per-adapter configuration.
    """

    workspace_root: Path
    target_file: str
    function_span: tuple[int, int]
    compile_command: tuple[str, ...]
    test_command: tuple[str, ...]
    per_run_timeout: float = DEFAULT_TIMEOUT_SECS
    syntax_check_command: tuple[str, ...] | None = None
    fail_pattern: str = DEFAULT_FAIL_PATTERN
    syntax_error_patterns: tuple[str, ...] = DEFAULT_SYNTAX_PATTERNS
    env_allowlist: tuple[str, ...] = DEFAULT_ENV_ALLOWLIST
    expected_body: str | None = None

    def __post_init__(self):
        start, end = self.function_span
        if start < 1 or end < start:
            raise ValueError(f"invalid function span {self.function_span}")
        if not self.test_command:
            raise ValueError("test_command must not be empty")

    def region_text(self, root: Path | None = None) -> str:
        lines = self._target_path(root).read_text(encoding="utf-8").splitlines()
        start, end = self.function_span
        if end > len(lines):
            raise LocatorMismatchError(
                f"{self.target_file}: span {self.function_span} exceeds"
                f" {len(lines)} lines"
            )
        return "\n".join(lines[start - 1 : end])

    def _target_path(self, root: Path | None = None) -> Path:
        return Path(root or self.workspace_root) / self.target_file


def adapter_from_dict(config: dict, base_dir: str | Path = ".") -> ProjectAdapter:
    """Build an adapter from its JSON config record."""
    base = Path(base_dir)
    root = Path(config["workspace_root"])
    if not root.is_absolute():
        root = base / root
    return ProjectAdapter(
        workspace_root=root,
        target_file=config["target_file"],
        function_span=tuple(config["function_span"]),
        compile_command=tuple(config["compile"]),
        test_command=tuple(config["test"]),
        per_run_timeout=float(config.get("timeout_secs", DEFAULT_TIMEOUT_SECS)),
        syntax_check_command=tuple(config["syntax_check"])
        if config.get("syntax_check")
        else None,
        fail_pattern=config.get("fail_pattern", DEFAULT_FAIL_PATTERN),
    )


def validate_locator(adapter: ProjectAdapter, function: SourceFunction) -> None:
    """Ensure the configured span delimits exactly the registered function body."""
    region = adapter.region_text()
    if normalize_code(region) != normalize_code(function.body):
        raise LocatorMismatchError(
            f"{function.id}: {adapter.target_file} lines"
            f" {adapter.function_span} do not match the registered body"
        )


@dataclass
class PatchedWorkspace:
    """An isolated, disposable copy of the project with one patch applied."""

    root: Path
    target_file: str

    def cleanup(self) -> None:
        shutil.rmtree(self.root, ignore_errors=True)

    def __enter__(self) -> "PatchedWorkspace":
        return self

    def __exit__(self, *exc_info) -> None:
        self.cleanup()


def apply_patch(adapter: ProjectAdapter, candidate_body: str) -> PatchedWorkspace:
    """Copy the workspace and splice the candidate body over the function span.

    The original workspace is never touched. Raises ``LocatorMismatchError``
    if the span no longer holds the registered buggy body.
    """
    if adapter.expected_body is not None:
        region = adapter.region_text()
        if normalize_code(region) != normalize_code(adapter.expected_body):
            raise LocatorMismatchError(
                f"{adapter.target_file}: span {adapter.function_span} no longer"
                " matches the registered buggy body"
            )
    if not adapter.workspace_root.is_dir():
        raise InfrastructureError(f"workspace {adapter.workspace_root} is not a directory")

    temp_root = Path(tempfile.mkdtemp(prefix="repairloop-ws-"))
    workspace = temp_root / "workspace"
    shutil.copytree(adapter.workspace_root, workspace)

    target = workspace / adapter.target_file
    lines = target.read_text(encoding="utf-8").splitlines()
    start, end = adapter.function_span
    patched = lines[: start - 1] + candidate_body.splitlines() + lines[end:]
    target.write_text("\n".join(patched) + "\n", encoding="utf-8")
    return PatchedWorkspace(root=workspace, target_file=adapter.target_file)


def _run_step(
    command: Sequence[str], cwd: Path, timeout: float, env: dict[str, str]
) -> StepResult:
    try:
        proc = subprocess.run(
            list(command),
            cwd=cwd,
            env=env,
            capture_output=True,
            text=True,
            timeout=timeout,
        )
    except subprocess.TimeoutExpired as exc:
        output = _decode(exc.stdout) + _decode(exc.stderr)
        return StepResult(exit_code=-1, output=output, timed_out=True)
    except (FileNotFoundError, PermissionError, OSError) as exc:
        raise InfrastructureError(f"cannot spawn {command[0]!r}: {exc}") from exc
    return StepResult(exit_code=proc.returncode, output=proc.stdout + proc.stderr)


def _decode(stream) -> str:
    if stream is None:
        return ""
    if isinstance(stream, bytes):
        return stream.decode("utf-8", errors="replace")
    return stream


def _sandbox_env(adapter: ProjectAdapter) -> dict[str, str]:
    return {
        key: os.environ[key] for key in adapter.env_allowlist if key in os.environ
    }


def run_and_classify(
    handle: PatchedWorkspace, adapter: ProjectAdapter
) -> VerificationOutcome:
    """Run syntax check, compile, then tests in the patched workspace."""
    env = _sandbox_env(adapter)
    syntax = compile_step = test = None
    if adapter.syntax_check_command:
        syntax = _run_step(
            adapter.syntax_check_command, handle.root, adapter.per_run_timeout, env
        )
    if _step_ok(syntax) and adapter.compile_command:
        compile_step = _run_step(
            adapter.compile_command, handle.root, adapter.per_run_timeout, env
        )
    if _step_ok(syntax) and _step_ok(compile_step):
        test = _run_step(
            adapter.test_command, handle.root, adapter.per_run_timeout, env
        )
    return classify_steps(syntax, compile_step, test, adapter)


def _step_ok(step: StepResult | None) -> bool:
    return step is None or (step.exit_code == 0 and not step.timed_out)


def classify_steps(
    syntax: StepResult | None,
    compile_step: StepResult | None,
    test: StepResult | None,
    adapter: ProjectAdapter,
) -> VerificationOutcome:
    """Map raw step results onto exactly one outcome kind.

    Ordering mirrors execution: syntax check, then compile, then tests. A
    step that hit the deadline classifies as Timeout regardless of stage.
    """
    if syntax is not None:
        if syntax.timed_out:
            return VerificationOutcome(OutcomeKind.TIMEOUT, detail=_head(syntax.output))
        if syntax.exit_code != 0:
            return VerificationOutcome(
                OutcomeKind.SYNTAX_ERROR, detail=_head(syntax.output)
            )
    if compile_step is not None:
        if compile_step.timed_out:
            return VerificationOutcome(
                OutcomeKind.TIMEOUT, detail=_head(compile_step.output)
            )
        if compile_step.exit_code != 0:
            kind = OutcomeKind.COMPILE_FAIL
            for pattern in adapter.syntax_error_patterns:
                if re.search(pattern, compile_step.output):
                    kind = OutcomeKind.SYNTAX_ERROR
                    break
            return VerificationOutcome(kind, detail=_head(compile_step.output))
    if test is None:
        return VerificationOutcome(OutcomeKind.PASS)
    if test.timed_out:
        return VerificationOutcome(OutcomeKind.TIMEOUT, detail=_head(test.output))
    if test.exit_code != 0:
        match = re.search(adapter.fail_pattern, test.output)
        if match:
            failing_class, failing_test = match.group(1), match.group(2)
            detail = test.output[match.start() :]
        else:
            failing_class, failing_test = "UnknownTest", "unknown"
            detail = test.output
        return VerificationOutcome(
            OutcomeKind.FAILING_TEST,
            failing_class=failing_class,
            failing_test=failing_test,
            detail=_head(detail),
        )
    return VerificationOutcome(OutcomeKind.PASS)


def _head(text: str) -> str:
    return text[:DETAIL_LIMIT]


_MESSAGES = {
    OutcomeKind.COMPILE_FAIL: "Compile Fail",
    OutcomeKind.TIMEOUT: "Time Out",
    OutcomeKind.SYNTAX_ERROR: "Syntax Error",
}


def format_failure_message(
    outcome: VerificationOutcome, append_detail: bool = True
) -> str:
    """Render the failure category string fed back to the model.

    With ``append_detail`` (the default) a failing test also carries the
    first line of its output excerpt; the other categories are always just
    the category name.
    """
    if outcome.kind is OutcomeKind.PASS:
        raise ValueError("a passing outcome has no failure message")
    if outcome.kind is OutcomeKind.FAILING_TEST:
        message = f"Failing test: {outcome.failing_class}::{outcome.failing_test}"
        if append_detail and outcome.detail.strip():
            message += ": " + outcome.detail.strip().splitlines()[0]
        return message
    return _MESSAGES[outcome.kind]


class AdapterRegistry:
    """Read-only after startup: function id -> project adapter."""

    def __init__(self, adapters: dict[str, ProjectAdapter] | None = None):
        self._adapters = dict(adapters or {})

    @classmethod
    def from_file(cls, path: str | Path) -> "AdapterRegistry":
        file = Path(path)
        if not file.is_file():
            raise InfrastructureError(f"adapters file not found: {path}")
        try:
            raw = json.loads(file.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InfrastructureError(f"adapters file {path} is not valid JSON: {exc}")
        return cls(
            {
                name: adapter_from_dict(config, base_dir=file.parent)
                for name, config in raw.items()
            }
        )

    def register(self, function_id: str, adapter: ProjectAdapter) -> None:
        self._adapters[function_id] = adapter

    def get(self, function_id: str) -> ProjectAdapter:
        try:
            return self._adapters[function_id]
        except KeyError:
            raise InfrastructureError(
                f"no project adapter registered for {function_id}"
            ) from None

    def __contains__(self, function_id: str) -> bool:
        return function_id in self._adapters


class WorkspaceVerifier:
    """Applies candidates through the registry and runs the project's suite."""

    def __init__(self, registry: AdapterRegistry):
        self.registry = registry

    def verify(
        self, function: SourceFunction, candidate_body: str
    ) -> VerificationOutcome:
        adapter = self.registry.get(function.id)
        if adapter.expected_body is None:
            adapter = replace(adapter, expected_body=function.body)
        with apply_patch(adapter, candidate_body) as handle:
            return run_and_classify(handle, adapter)
