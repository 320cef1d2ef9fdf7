"""Shared fixtures: sample functions, pools, scripted verifiers, and a
real toy project workspace driven by interpreter commands."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import pytest

from repairloop.domain import CoTSample, KnowledgePool, SourceFunction, normalize_code
from repairloop.verify import OutcomeKind, ProjectAdapter, VerificationOutcome

GOLDEN_DIR = Path(__file__).parent / "golden"

JAVA_BUGGY_BODY = """\
public static int getMax(int[] values) {
    int max = 0;
    for (int v : values) {
        if (v > max) {
            max = v;
        }
    }
    return max;
}"""

JAVA_FIXED_BODY = """\
public static int getMax(int[] values) {
    int max = Integer.MIN_VALUE;
    for (int v : values) {
        if (v > max) {
            max = v;
        }
    }
    return max;
}"""

EXEMPLAR_1 = CoTSample(
    buggy=SourceFunction(
        id="Lang-7",
        language="java",
        body=(
            "public static int clamp(int value, int low, int high) {\n"
            "    if (value < low) {\n"
            "        return low;\n"
            "    }\n"
            "    return value;\n"
            "}"
        ),
    ),
    chain_of_thought=(
        "The function must also cap values above the high bound. Adding an"
        " upper-bound branch that returns high fixes the missing case."
    ),
    fixed_body=(
        "public static int clamp(int value, int low, int high) {\n"
        "    if (value < low) {\n"
        "        return low;\n"
        "    }\n"
        "    if (value > high) {\n"
        "        return high;\n"
        "    }\n"
        "    return value;\n"
        "}"
    ),
    attempts_used=1,
    verified=True,
)

EXEMPLAR_2 = CoTSample(
    buggy=SourceFunction(
        id="Math-12",
        language="java",
        body="public static boolean isEven(int n) {\n    return n % 2 == 1;\n}",
    ),
    chain_of_thought=(
        "The remainder check tests for odd numbers. Comparing the remainder"
        " to zero instead tests evenness."
    ),
    fixed_body="public static boolean isEven(int n) {\n    return n % 2 == 0;\n}",
    attempts_used=2,
    verified=True,
)


def make_function(
    fid: str = "Demo-1",
    language: str = "java",
    body: str = JAVA_BUGGY_BODY,
    fault_lines=None,
    scenario=None,
) -> SourceFunction:
    return SourceFunction(
        id=fid, language=language, body=body, fault_lines=fault_lines, scenario=scenario
    )


def make_sample(
    fid: str = "Demo-1",
    buggy_body: str | None = None,
    fixed_body: str | None = None,
    cot: str = "The initial value is wrong; start from the smallest int.",
    attempts: int = 1,
    language: str = "java",
) -> CoTSample:
    buggy_body = buggy_body or f"int f_{fid.replace('-', '_')}() {{\n    return 0;\n}}"
    if fixed_body is None:
        fixed_body = buggy_body.replace("return 0;", "return 1;")
        if fixed_body == buggy_body:
            fixed_body = buggy_body + "\n// guard added"
    return CoTSample(
        buggy=SourceFunction(id=fid, language=language, body=buggy_body),
        chain_of_thought=cot,
        fixed_body=fixed_body,
        attempts_used=attempts,
        verified=True,
    )


def make_pool(n: int = 3, provenance: str = "test pool") -> KnowledgePool:
    return KnowledgePool(
        samples=tuple(make_sample(f"Pool-{i}") for i in range(1, n + 1)),
        provenance=provenance,
    )


@pytest.fixture
def two_exemplars():
    return [EXEMPLAR_1, EXEMPLAR_2]


@dataclass
class ScriptedVerifier:
    """Test double: decides outcomes without touching a workspace.

    Candidates whose normalized body is in ``pass_bodies`` pass; otherwise
    ``outcome`` is returned. ``pass_on_call`` forces a pass on exactly that
    verify invocation (1-based).
    """

    outcome: VerificationOutcome = VerificationOutcome(
        OutcomeKind.COMPILE_FAIL, detail="stub compile failure"
    )
    pass_bodies: set = field(default_factory=set)
    pass_on_call: int | None = None
    calls: int = 0
    seen: list = field(default_factory=list)

    def verify(self, function, candidate_body):
        self.calls += 1
        self.seen.append((function.id, candidate_body))
        if self.pass_on_call is not None and self.calls == self.pass_on_call:
            return VerificationOutcome(OutcomeKind.PASS)
        if normalize_code(candidate_body) in self.pass_bodies:
            return VerificationOutcome(OutcomeKind.PASS)
        return self.outcome

    @classmethod
    def passing(cls, *bodies: str) -> "ScriptedVerifier":
        return cls(pass_bodies={normalize_code(b) for b in bodies})


def fenced(body: str, reasoning: str = "Thinking about the bug step by step.") -> str:
    """A plausible model response: reasoning followed by a fenced code block."""
    return f"{reasoning}\n```java\n{body}\n```"


TOY_BUGGY_BODY = """\
def rotate(values, k):
    \"\"\"Rotate a list right by k positions.\"\"\"
    if not values:
        return []
    n = len(values)
    k = k % n
    if k == 0:
        return list(values)
    head = values[k:]
    return head + values[:k]"""

TOY_FIXED_BODY = """\
def rotate(values, k):
    \"\"\"Rotate a list right by k positions.\"\"\"
    if not values:
        return []
    n = len(values)
    k = k % n
    if k == 0:
        return list(values)
    head = values[-k:]
    return head + values[:-k]"""

TOY_WRONG_BODY = """\
def rotate(values, k):
    \"\"\"Rotate a list right by k positions.\"\"\"
    return list(reversed(values))"""

_TOY_TESTS = """\
import sys

from rotate import rotate

CASES = [
    ("testEmpty", [], 3, []),
    ("testZero", [1, 2, 3], 0, [1, 2, 3]),
    ("testShift", [1, 2, 3, 4, 5], 2, [4, 5, 1, 2, 3]),
]

failures = 0
for name, values, k, expected in CASES:
    try:
        got = rotate(list(values), k)
    except Exception as exc:
        print(f"FAIL RotateTest::{name} raised {exc!r}")
        failures += 1
        continue
    if got != expected:
        print(f"FAIL RotateTest::{name} got {got!r}")
        failures += 1
    else:
        print(f"PASS RotateTest::{name}")
sys.exit(1 if failures else 0)
"""


def build_toy_project(root: Path, fid: str = "Toy-1"):
    """A real buggy workspace: one module, a three-case suite, and an adapter
    whose commands run the local interpreter."""
    workspace = root / f"workspace-{fid}"
    workspace.mkdir(parents=True)
    (workspace / "rotate.py").write_text(TOY_BUGGY_BODY + "\n", encoding="utf-8")
    (workspace / "tests.py").write_text(_TOY_TESTS, encoding="utf-8")
    function = SourceFunction(
        id=fid, language="python", body=TOY_BUGGY_BODY, scenario="single_line"
    )
    adapter = ProjectAdapter(
        workspace_root=workspace,
        target_file="rotate.py",
        function_span=(1, 10),
        compile_command=(sys.executable, "-m", "py_compile", "rotate.py"),
        test_command=(sys.executable, "tests.py"),
        per_run_timeout=30.0,
        fail_pattern=r"FAIL\s+([\w.]+)::(\w+)",
    )
    return function, adapter


@pytest.fixture
def toy_project(tmp_path):
    return build_toy_project(tmp_path)
