"""Tests for core types, pool persistence, and the lexical-match metric."""

import random

import pytest

from repairloop.domain import (
    CandidatePatch,
    CoTSample,
    KnowledgePool,
    PoolSchemaError,
    SourceFunction,
    UnverifiedSampleError,
    lexical_match,
    normalize_code,
    pool_insert,
    pool_load,
    pool_save,
)

from conftest import make_function, make_sample


class TestSourceFunction:
    def test_rejects_empty_body(self):
        with pytest.raises(ValueError, match="non-empty"):
            SourceFunction(id="X-1", language="java", body="")

    def test_rejects_fault_lines_out_of_range(self):
        with pytest.raises(ValueError, match="fault lines"):
            make_function(body="one line", fault_lines={2})

    def test_accepts_fault_lines_in_range(self):
        function = make_function(body="a\nb\nc", fault_lines=[1, 3])
        assert function.fault_lines == frozenset({1, 3})

    def test_rejects_unknown_scenario(self):
        with pytest.raises(ValueError, match="scenario"):
            make_function(scenario="whole_program")


class TestCoTSample:
    def test_rejects_empty_chain_of_thought(self):
        with pytest.raises(ValueError, match="chain_of_thought"):
            make_sample(cot="   ")

    def test_rejects_fix_identical_to_bug(self):
        body = "int f() {\n    return 0;\n}"
        with pytest.raises(ValueError, match="identical"):
            make_sample(buggy_body=body, fixed_body="int f() {\n  return 0;\n}")

    def test_rejects_nonpositive_attempts(self):
        with pytest.raises(ValueError, match="attempts_used"):
            make_sample(attempts=0)


class TestPoolInsert:
    def test_insert_into_empty_pool(self):
        pool, duplicate = pool_insert(KnowledgePool(), make_sample())
        assert len(pool) == 1
        assert duplicate is False

    def test_duplicate_flagged_and_pool_unchanged(self):
        sample = make_sample()
        pool, _ = pool_insert(KnowledgePool(), sample)
        pool2, duplicate = pool_insert(pool, sample)
        assert duplicate is True
        assert pool2 == pool
        assert len(pool2) == 1

    def test_whitespace_variant_fix_is_a_duplicate(self):
        sample = make_sample()
        pool, _ = pool_insert(KnowledgePool(), sample)
        variant = CoTSample(
            buggy=sample.buggy,
            chain_of_thought="Different reasoning, same fix.",
            fixed_body="  " + sample.fixed_body.replace("\n", "\n    "),
            verified=True,
        )
        _, duplicate = pool_insert(pool, variant)
        assert duplicate is True

    def test_rejects_unverified_sample(self):
        sample = make_sample()
        unverified = CoTSample(
            buggy=sample.buggy,
            chain_of_thought=sample.chain_of_thought,
            fixed_body=sample.fixed_body,
            verified=False,
        )
        with pytest.raises(UnverifiedSampleError):
            pool_insert(KnowledgePool(), unverified)

    def test_228_sequential_inserts(self):
        # Oracle: build the pool one verified sample at a time and count.
        pool = KnowledgePool(provenance="synthetic")
        for i in range(1, 229):
            pool, duplicate = pool_insert(pool, make_sample(f"Synth-{i}"))
            assert duplicate is False
        assert len(pool) == 228
        pool, duplicate = pool_insert(pool, make_sample("Synth-229"))
        assert duplicate is False
        assert len(pool) == 229

    def test_pool_rejects_unverified_at_construction(self):
        sample = make_sample()
        bad = CoTSample(
            buggy=sample.buggy,
            chain_of_thought=sample.chain_of_thought,
            fixed_body=sample.fixed_body,
            verified=False,
        )
        with pytest.raises(UnverifiedSampleError):
            KnowledgePool(samples=(bad,))


class TestPoolPersistence:
    def test_round_trip_empty_pool(self, tmp_path):
        pool = KnowledgePool(provenance="empty run")
        path = tmp_path / "pool.json"
        pool_save(pool, path)
        assert pool_load(path) == pool

    def test_round_trip_multiline_cot_with_quotes(self, tmp_path):
        samples = tuple(
            make_sample(
                f"Quote-{i}",
                cot='Step 1: the guard uses "==" where it needs "<=".\n'
                'Step 2: change it.\nStep 3: re-run the "suite".',
            )
            for i in range(3)
        )
        pool = KnowledgePool(samples=samples, provenance="quoted", embedder_id="e-1")
        path = tmp_path / "pool.json"
        pool_save(pool, path)
        loaded = pool_load(path)
        assert loaded == pool
        assert [s.buggy.id for s in loaded] == [s.buggy.id for s in pool]

    def test_round_trip_preserves_fault_lines(self, tmp_path):
        sample = CoTSample(
            buggy=make_function("Fault-1", body="a()\nb()\nc()", fault_lines={2}),
            chain_of_thought="Line two is wrong.",
            fixed_body="a()\nB()\nc()",
            verified=True,
        )
        pool = KnowledgePool(samples=(sample,), provenance="faults")
        path = tmp_path / "pool.json"
        pool_save(pool, path)
        assert pool_load(path).samples[0].buggy.fault_lines == frozenset({2})

    def test_missing_chain_of_thought_names_field(self, tmp_path):
        pool = KnowledgePool(samples=(make_sample(),), provenance="x")
        path = tmp_path / "pool.json"
        pool_save(pool, path)
        import json

        raw = json.loads(path.read_text())
        del raw["samples"][0]["chain_of_thought"]
        path.write_text(json.dumps(raw))
        with pytest.raises(PoolSchemaError) as excinfo:
            pool_load(path)
        assert "chain_of_thought" in str(excinfo.value)

    def test_wrong_type_names_field(self, tmp_path):
        pool = KnowledgePool(samples=(make_sample(),), provenance="x")
        path = tmp_path / "pool.json"
        pool_save(pool, path)
        import json

        raw = json.loads(path.read_text())
        raw["samples"][0]["attempts_used"] = "seven"
        path.write_text(json.dumps(raw))
        with pytest.raises(PoolSchemaError, match="attempts_used"):
            pool_load(path)

    def test_not_json_is_a_schema_error(self, tmp_path):
        path = tmp_path / "pool.json"
        path.write_text("{not json")
        with pytest.raises(PoolSchemaError):
            pool_load(path)


class TestLexicalMatch:
    def test_identical_strings(self):
        body = "int f() {\n    return 1;\n}"
        assert lexical_match(body, body) is True

    def test_indentation_and_blank_lines_ignored(self):
        a = "int f() {\n    return 1;\n}"
        b = "int f() {\n\n\treturn  1;\n\n}\n"
        assert lexical_match(a, b) is True

    def test_semantically_equal_but_lexically_different(self):
        # Two developer fixes for the same bug that compute the same value
        # through different expressions must NOT match.
        ground_truth = (
            "double t = Math.abs(r * Math.sqrt((nObs - 2)/(1 - r * r)));\n"
            "out[i][j] = 2 * tDistribution.cumulativeProbability(-t);"
        )
        generated = (
            "double t = r * Math.sqrt((nObs - 2)/(1 - r * r));\n"
            "out[i][j] = 2 * tDistribution.cumulativeProbability(-Math.abs(t));"
        )
        assert lexical_match(generated, ground_truth) is False

    def test_comment_differences_break_the_match(self):
        a = "int f() {\n    return 1; // one\n}"
        b = "int f() {\n    return 1; // uno\n}"
        assert lexical_match(a, b) is False

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            lexical_match("", "int f() {}")

    def test_equivalence_relation_on_random_snippets(self):
        # Reflexive, symmetric, transitive over whitespace-perturbed variants.
        rng = random.Random(7)
        fragments = ["int a = 1;", "if (a > b) {", "return a;", "}", "a += b;"]

        def perturb(code: str) -> str:
            out = []
            for line in code.splitlines():
                out.append(" " * rng.randint(0, 8) + line.replace(" ", "  " * rng.randint(1, 2)))
                if rng.random() < 0.3:
                    out.append("" if rng.random() < 0.5 else "   ")
            return "\n".join(out)

        for _ in range(50):
            base = "\n".join(rng.sample(fragments, rng.randint(1, len(fragments))))
            x, y, z = perturb(base), perturb(base), perturb(base)
            assert lexical_match(x, x)
            assert lexical_match(x, y) == lexical_match(y, x)
            if lexical_match(x, y) and lexical_match(y, z):
                assert lexical_match(x, z)
            assert lexical_match(x, y)  # same base always matches


class TestNormalizeCode:
    def test_collapses_internal_runs(self):
        assert normalize_code("a   =    1") == "a = 1"

    def test_drops_blank_lines_and_indentation(self):
        assert normalize_code("  a\n\n\n   b  ") == "a\nb"


class TestCandidatePatch:
    def test_rejects_empty_body(self):
        with pytest.raises(ValueError):
            CandidatePatch("X-1", "   ", 1, 1, "raw")

    def test_rejects_zero_indices(self):
        with pytest.raises(ValueError):
            CandidatePatch("X-1", "body", 0, 1, "raw")
