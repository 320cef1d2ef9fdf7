"""Tests for prompt construction and response parsing."""

import random

import pytest

from repairloop.domain import CoTSample, SourceFunction
from repairloop.prompts import (
    COT_INDICATOR,
    ROLE_DESIGNATION,
    EmptyExemplarsError,
    ExtractionNote,
    PromptBudgetError,
    UnsupportedLanguageError,
    build_collection_prompt,
    build_feedback_turn,
    build_fixing_prompt,
    build_fixing_prompt_within_budget,
    comment_prefix_for,
    parse_response,
)

from conftest import EXEMPLAR_1, EXEMPLAR_2, GOLDEN_DIR, JAVA_BUGGY_BODY, make_function

PYTHON_BODY = """\
def get_max(values):
    max_value = 0
    for v in values:
        if v > max_value:
            max_value = v
    return max_value"""


def golden(name: str) -> str:
    return (GOLDEN_DIR / name).read_text(encoding="utf-8")


class TestCollectionPrompt:
    def test_java_matches_golden(self):
        messages = build_collection_prompt(make_function())
        assert len(messages) == 2
        assert messages[0].role == "system"
        assert messages[0].content == "You are an Automated Program Repair tool"
        assert messages[1].role == "user"
        assert messages[1].content == golden("collection_prompt_java.txt")

    def test_python_prefix(self):
        messages = build_collection_prompt(
            make_function("Py-1", language="python", body=PYTHON_BODY)
        )
        assert messages[1].content == golden("collection_prompt_python.txt")

    def test_fault_line_marker(self):
        messages = build_collection_prompt(make_function(fault_lines={2}))
        assert messages[1].content == golden("collection_prompt_fault_line.txt")
        # only the marked line changed
        plain = golden("collection_prompt_java.txt").splitlines()
        marked = messages[1].content.splitlines()
        assert sum(a != b for a, b in zip(plain, marked)) == 1

    def test_unknown_language_rejected(self):
        with pytest.raises(UnsupportedLanguageError):
            build_collection_prompt(make_function(language="cobol"))

    def test_prefix_override(self):
        messages = build_collection_prompt(
            make_function(language="cobol", body="x\ny"), comment_prefix="*>"
        )
        assert "*> Buggy Function" in messages[1].content

    def test_anchor_order(self):
        content = build_collection_prompt(make_function())[1].content
        task = content.index("// Provide a fix for the buggy function")
        buggy = content.index("// Buggy Function")
        cot = content.index(COT_INDICATOR)
        assert task < buggy < cot
        assert content.endswith(COT_INDICATOR)

    def test_determinism(self):
        f = make_function(fault_lines={3})
        assert build_collection_prompt(f) == build_collection_prompt(f)


class TestFixingPrompt:
    def test_two_shot_matches_golden(self):
        messages = build_fixing_prompt([EXEMPLAR_1, EXEMPLAR_2], make_function())
        assert messages[0].content == ROLE_DESIGNATION
        assert messages[1].content == golden("fixing_prompt_two_shot.txt")

    def test_structure_two_fixed_headers_one_indicator(self):
        content = build_fixing_prompt([EXEMPLAR_1, EXEMPLAR_2], make_function())[1].content
        assert content.count("// Fixed Function") == 2
        assert content.count(COT_INDICATOR) == 1
        assert content.endswith(COT_INDICATOR)

    def test_empty_exemplars_rejected(self):
        with pytest.raises(EmptyExemplarsError):
            build_fixing_prompt([], make_function())

    def test_unverified_exemplar_rejected(self):
        unverified = CoTSample(
            buggy=EXEMPLAR_1.buggy,
            chain_of_thought=EXEMPLAR_1.chain_of_thought,
            fixed_body=EXEMPLAR_1.fixed_body,
            verified=False,
        )
        with pytest.raises(ValueError, match="verified"):
            build_fixing_prompt([unverified], make_function())

    def test_cot_text_included_verbatim(self):
        exemplar = CoTSample(
            buggy=EXEMPLAR_1.buggy,
            chain_of_thought="step one; then step two; the word step stays.",
            fixed_body=EXEMPLAR_1.fixed_body,
            verified=True,
        )
        content = build_fixing_prompt([exemplar], make_function())[1].content
        assert "step one; then step two; the word step stays." in content

    def test_exemplar_order_preserved(self):
        content = build_fixing_prompt([EXEMPLAR_2, EXEMPLAR_1], make_function())[1].content
        assert content.index("isEven") < content.index("clamp")

    def test_target_fault_marks_rendered(self):
        content = build_fixing_prompt(
            [EXEMPLAR_1], make_function(fault_lines={2})
        )[1].content
        assert "int max = 0; // buggy line" in content


class TestBudgetTrimming:
    def test_drops_exemplars_from_the_end(self):
        target = make_function()
        full = build_fixing_prompt([EXEMPLAR_1, EXEMPLAR_2], target)
        budget = sum(len(m.content) for m in full) - 1
        messages, kept = build_fixing_prompt_within_budget(
            [EXEMPLAR_1, EXEMPLAR_2], target, max_chars=budget
        )
        assert kept == [EXEMPLAR_1]
        assert sum(len(m.content) for m in messages) <= budget

    def test_fails_when_zero_exemplars_still_over(self):
        with pytest.raises(PromptBudgetError):
            build_fixing_prompt_within_budget(
                [EXEMPLAR_1], make_function(), max_chars=10
            )

    def test_no_budget_keeps_everything(self):
        messages, kept = build_fixing_prompt_within_budget(
            [EXEMPLAR_1, EXEMPLAR_2], make_function()
        )
        assert kept == [EXEMPLAR_1, EXEMPLAR_2]
        assert messages == build_fixing_prompt([EXEMPLAR_1, EXEMPLAR_2], make_function())


class TestFeedbackTurn:
    @pytest.mark.parametrize(
        "message,golden_name",
        [
            ("Compile Fail", "feedback_compile_fail.txt"),
            ("Time Out", "feedback_time_out.txt"),
            ("Syntax Error", "feedback_syntax_error.txt"),
            ("Failing test: CodecTest::testRoundTrip", "feedback_failing_test.txt"),
        ],
    )
    def test_matches_golden(self, message, golden_name):
        turn = build_feedback_turn(message)
        assert turn.role == "user"
        assert turn.content == golden(golden_name)

    def test_always_ends_with_indicator(self):
        assert build_feedback_turn("anything").content.endswith(
            "Let's think step by step."
        )

    def test_empty_message_rejected(self):
        with pytest.raises(ValueError):
            build_feedback_turn("")


class TestParseResponse:
    def test_single_fenced_block(self):
        parsed = parse_response("reasoning...\n```java\nint f(){return 1;}\n```")
        assert parsed.candidate_body == "int f(){return 1;}"
        assert parsed.chain_of_thought == "reasoning..."
        assert parsed.extraction_note is ExtractionNote.FENCED_BLOCK

    def test_last_block_wins(self):
        text = (
            "The buggy code was:\n```java\nint f(){return 0;}\n```\n"
            "Here is the fix:\n```java\nint f(){return 1;}\n```"
        )
        parsed = parse_response(text)
        assert parsed.candidate_body == "int f(){return 1;}"
        assert "The buggy code was:" in parsed.chain_of_thought
        assert "Here is the fix:" in parsed.chain_of_thought

    def test_language_tag_ignored(self):
        for tag in ("", "java", "python", "Java "):
            parsed = parse_response(f"x\n```{tag}\ncode body\n```")
            assert parsed.candidate_body == "code body"

    def test_prose_only_gives_none_found(self):
        parsed = parse_response("I am not sure how to fix this.")
        assert parsed.candidate_body is None
        assert parsed.extraction_note is ExtractionNote.NONE_FOUND
        assert parsed.chain_of_thought == "I am not sure how to fix this."

    def test_heuristic_java_span(self):
        text = "Apply this change:\npublic int f(int a) {\n    return a + 1;\n}\nDone."
        parsed = parse_response(text)
        assert parsed.extraction_note is ExtractionNote.HEURISTIC_SPAN
        assert parsed.candidate_body.startswith("public int f(int a) {")
        assert parsed.candidate_body.endswith("}")

    def test_heuristic_python_span(self):
        text = "Fix:\ndef g(x):\n    y = x + 1\n    return y\nThat resolves it."
        parsed = parse_response(text)
        assert parsed.extraction_note is ExtractionNote.HEURISTIC_SPAN
        assert parsed.candidate_body == "def g(x):\n    y = x + 1\n    return y"

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            parse_response("")

    def test_candidate_never_contains_fence_delimiters(self):
        rng = random.Random(11)
        snippets = [
            "int f(){return 1;}",
            "def g():\n    return 2",
            "x = 1\ny = 2",
        ]
        for _ in range(100):
            parts = []
            for _ in range(rng.randint(1, 4)):
                if rng.random() < 0.5:
                    parts.append("prose " * rng.randint(1, 5))
                else:
                    tag = rng.choice(["", "java", "python"])
                    parts.append(f"```{tag}\n{rng.choice(snippets)}\n```")
            text = "\n".join(parts)
            parsed = parse_response(text)
            if parsed.candidate_body is not None:
                assert "```" not in parsed.candidate_body


class TestCommentPrefix:
    def test_known_languages(self):
        assert comment_prefix_for("java") == "//"
        assert comment_prefix_for("python") == "#"

    def test_override_beats_table(self):
        assert comment_prefix_for("java", "--") == "--"
