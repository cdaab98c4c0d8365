import logging

import pytest

from querycrew.agents import (
    CandidateQuery,
    Cluster,
    ColumnProfile,
    GenerationError,
    RetrievedContext,
    UnitTest,
    Verdict,
    build_column_profile,
    evaluate_against_test,
    extract_keywords,
    filter_column,
    generate_candidate,
    generate_unit_tests,
    revise,
    select_columns,
    select_tables,
)
from querycrew.catalog import full_projection, project
from querycrew.executor import FaultReport
from querycrew.gateway import Gateway, MockBackend, SamplingParams
from querycrew.value_index import EntityMatch


def gw_with(responses):
    return Gateway.single(MockBackend(responses=responses))


QUESTION = "What's the fastest lap time ever in a race for Lewis Hamilton?"
HINT = "fastest lap time ever refers to min(fastestLapTime)"


class TestExtractKeywords:
    def test_two_keywords(self):
        gw = gw_with(
            {("q+extract_keywords+0", "extract_keywords"): ['["Lewis Hamilton", "fastest lap time"]']}
        )
        keywords = extract_keywords(QUESTION, HINT, gw, "q+extract_keywords+0")
        assert [k.text for k in keywords] == ["Lewis Hamilton", "fastest lap time"]
        assert keywords[0].source == "question"

    def test_duplicates_removed(self):
        gw = gw_with(
            {("k", "extract_keywords"): ['["a", "b", "a", "B"]']}
        )
        keywords = extract_keywords("a b question", "", gw, "k")
        assert [k.text for k in keywords] == ["a", "b"]

    def test_empty_list_ok(self):
        gw = gw_with({("k", "extract_keywords"): ["[]"]})
        assert extract_keywords("q", "", gw, "k") == []

    def test_unparseable_after_retry_empty(self, caplog):
        gw = gw_with(
            {
                ("k", "extract_keywords"): ["nonsense"],
                ("k#retry1", "extract_keywords"): ["still nonsense"],
            }
        )
        with caplog.at_level(logging.WARNING):
            assert extract_keywords("q", "", gw, "k") == []

    def test_hint_source(self):
        gw = gw_with({("k", "extract_keywords"): ['["min(fastestLapTime)"]']})
        keywords = extract_keywords("a question", "refers to min(fastestLapTime)", gw, "k")
        assert keywords[0].source == "hint"


class TestFilterColumn:
    PROFILE = ColumnProfile("results", "fastestLapTime", "TEXT")

    def test_yes(self):
        gw = gw_with(
            {("k", "filter_column"): ['{"chain_of_thought_reasoning": "r", "is_column_information_relevant": "Yes"}']}
        )
        assert filter_column(self.PROFILE, QUESTION, HINT, gw, "k") is True

    def test_no(self):
        gw = gw_with(
            {("k", "filter_column"): ['{"is_column_information_relevant": "No"}']}
        )
        assert filter_column(self.PROFILE, QUESTION, HINT, gw, "k") is False

    def test_parse_failure_keeps_column(self, caplog):
        gw = gw_with({("k", "filter_column"): ["garbled"]})
        with caplog.at_level(logging.WARNING):
            assert filter_column(self.PROFILE, QUESTION, HINT, gw, "k") is True
        assert len(gw.calls) == 1  # no retry for this tool

    def test_profile_rendered_into_prompt(self):
        backend = MockBackend(
            responses={("k", "filter_column"): ['{"is_column_information_relevant": "Yes"}']}
        )
        gw = Gateway.single(backend)
        profile = ColumnProfile(
            "district", "A11", "INTEGER",
            descriptions=["expanded column name: average salary"],
            matched_values=["8968"],
        )
        filter_column(profile, "q", "h", gw, "k")
        # prompt token count reflects the profile text making it in
        assert gw.calls[0].prompt_tokens > 0


class TestSelectTables:
    def test_two_tables(self, motorsport_catalog):
        sub = full_projection(motorsport_catalog)
        gw = gw_with(
            {("k", "select_tables"): ['{"chain_of_thought_reasoning": "r", "table_names": ["drivers", "results"]}']}
        )
        assert select_tables(sub, QUESTION, HINT, gw, "k") == ["drivers", "results"]

    def test_hallucinated_name_dropped(self, motorsport_catalog, caplog):
        sub = full_projection(motorsport_catalog)
        gw = gw_with(
            {("k", "select_tables"): ['{"table_names": ["drivers", "ghost"]}']}
        )
        with caplog.at_level(logging.WARNING):
            assert select_tables(sub, QUESTION, HINT, gw, "k") == ["drivers"]

    def test_empty_intersection_falls_back(self, motorsport_catalog, caplog):
        sub = full_projection(motorsport_catalog)
        gw = gw_with({("k", "select_tables"): ['{"table_names": ["ghost"]}']})
        with caplog.at_level(logging.WARNING):
            out = select_tables(sub, QUESTION, HINT, gw, "k")
        assert out == sub.table_names()

    def test_parse_failure_falls_back(self, motorsport_catalog):
        sub = full_projection(motorsport_catalog)
        gw = gw_with(
            {
                ("k", "select_tables"): ["junk"],
                ("k#retry1", "select_tables"): ["junk again"],
            }
        )
        assert select_tables(sub, QUESTION, HINT, gw, "k") == sub.table_names()

    def test_case_insensitive_resolution(self, motorsport_catalog):
        sub = full_projection(motorsport_catalog)
        gw = gw_with({("k", "select_tables"): ['{"table_names": ["DRIVERS"]}']})
        assert select_tables(sub, QUESTION, HINT, gw, "k") == ["drivers"]


class TestSelectColumns:
    def test_retention_reapplied(self, motorsport_catalog):
        sub = project(
            motorsport_catalog,
            {"drivers": ["forename", "surname"], "results": ["fastestLapTime", "laps"]},
        )
        gw = gw_with(
            {
                ("k", "select_columns"): [
                    '{"chain_of_thought_reasoning": "r",'
                    ' "drivers": ["forename"], "results": ["fastestLapTime"]}'
                ]
            }
        )
        out = select_columns(sub, QUESTION, HINT, gw, "k")
        assert out == {
            "drivers": ["driverId", "forename"],
            "results": ["resultId", "driverId", "fastestLapTime"],
        }

    def test_zero_columns_keeps_pk(self, motorsport_catalog):
        sub = project(motorsport_catalog, {"drivers": ["forename"]})
        gw = gw_with({("k", "select_columns"): ['{"drivers": []}']})
        out = select_columns(sub, QUESTION, HINT, gw, "k")
        assert out == {"drivers": ["driverId"]}

    def test_unknown_columns_dropped_with_warning(self, motorsport_catalog, caplog):
        sub = project(motorsport_catalog, {"drivers": ["forename"]})
        gw = gw_with(
            {("k", "select_columns"): ['{"drivers": ["forename", "ghost_col"]}']}
        )
        with caplog.at_level(logging.WARNING):
            out = select_columns(sub, QUESTION, HINT, gw, "k")
        assert out == {"drivers": ["driverId", "forename"]}
        assert any("ghost_col" in r.message for r in caplog.records)

    def test_parse_failure_returns_sub_unchanged(self, motorsport_catalog):
        sub = project(motorsport_catalog, {"drivers": ["forename"]})
        gw = gw_with(
            {
                ("k", "select_columns"): ["junk"],
                ("k#retry1", "select_columns"): ["junk"],
            }
        )
        assert select_columns(sub, QUESTION, HINT, gw, "k") == sub.as_requested()


class TestGenerateCandidate:
    def test_n_samples(self, motorsport_catalog):
        sub = full_projection(motorsport_catalog)
        responses = {
            (f"q+generate_candidate+{i}", "generate_candidate"): [
                f'{{"chain_of_thought_reasoning": "r{i}", "SQL": "SELECT {i}"}}'
            ]
            for i in range(3)
        }
        gw = gw_with(responses)
        candidates = generate_candidate(
            QUESTION, HINT, sub, RetrievedContext(), gw,
            SamplingParams(temperature=1.0, n_samples=3), scenario_prefix="q",
        )
        assert [c.generation_index for c in candidates] == [0, 1, 2]
        assert [c.sql for c in candidates] == ["SELECT 0", "SELECT 1", "SELECT 2"]
        assert len(gw.calls) == 3

    def test_single_sample(self, motorsport_catalog):
        sub = full_projection(motorsport_catalog)
        gw = gw_with(
            {("q+generate_candidate+0", "generate_candidate"): ['{"SQL": "SELECT 1"}']}
        )
        out = generate_candidate(
            QUESTION, HINT, sub, RetrievedContext(), gw, SamplingParams(), "q"
        )
        assert len(out) == 1

    def test_identical_sql_distinct_indices(self, motorsport_catalog):
        sub = full_projection(motorsport_catalog)
        responses = {
            (f"q+generate_candidate+{i}", "generate_candidate"): ['{"SQL": "SELECT 1"}']
            for i in range(2)
        }
        gw = gw_with(responses)
        out = generate_candidate(
            QUESTION, HINT, sub, RetrievedContext(), gw,
            SamplingParams(n_samples=2), "q",
        )
        assert [c.generation_index for c in out] == [0, 1]

    def test_bad_sample_dropped_index_preserved(self, motorsport_catalog, caplog):
        sub = full_projection(motorsport_catalog)
        gw = gw_with(
            {
                ("q+generate_candidate+0", "generate_candidate"): ["garbage"],
                ("q+generate_candidate+1", "generate_candidate"): ['{"SQL": "SELECT 2"}'],
            }
        )
        with caplog.at_level(logging.WARNING):
            out = generate_candidate(
                QUESTION, HINT, sub, RetrievedContext(), gw,
                SamplingParams(n_samples=2), "q",
            )
        assert len(out) == 1
        assert out[0].generation_index == 1

    def test_all_dropped_raises(self, motorsport_catalog):
        sub = full_projection(motorsport_catalog)
        gw = gw_with(
            {("q+generate_candidate+0", "generate_candidate"): ["junk"]}
        )
        with pytest.raises(GenerationError):
            generate_candidate(
                QUESTION, HINT, sub, RetrievedContext(), gw, SamplingParams(), "q"
            )


class TestRevise:
    def test_revision_increments_count(self, motorsport_catalog):
        sub = full_projection(motorsport_catalog)
        candidate = CandidateQuery(sql="SELEC 1", generation_index=0)
        gw = gw_with(
            {("k", "revise"): ['{"revised_SQL": "SELECT 1"}']}
        )
        out = revise(
            QUESTION, HINT, sub, RetrievedContext(), candidate,
            FaultReport("syntax_error", 'near "SELEC": syntax error'), gw, "k",
        )
        assert out.sql == "SELECT 1"
        assert out.revision_count == 1
        assert out.generation_index == 0

    def test_parse_failure_returns_original(self, motorsport_catalog, caplog):
        sub = full_projection(motorsport_catalog)
        candidate = CandidateQuery(sql="SELECT x", generation_index=2, revision_count=1)
        gw = gw_with({("k", "revise"): ["junk"]})
        with caplog.at_level(logging.WARNING):
            out = revise(
                QUESTION, HINT, sub, RetrievedContext(), candidate,
                FaultReport("empty_result", "query returned 0 rows"), gw, "k",
            )
        assert out is candidate
        assert out.revision_count == 1

    def test_issue_detail_lands_in_prompt(self, motorsport_catalog):
        sub = project(motorsport_catalog, {"drivers": ["forename"]})
        candidate = CandidateQuery(sql="SELECT 1")
        backend = MockBackend(responses={("k", "revise"): ['{"revised_SQL": "SELECT 2"}']})
        gw = Gateway.single(backend)
        revise(
            QUESTION, HINT, sub, RetrievedContext(), candidate,
            FaultReport("runtime_error", "no such column: ghost"), gw, "k",
        )
        assert len(gw.calls) == 1


class TestUnitTests:
    def _clusters(self):
        return [
            Cluster(
                fingerprint="a", members=[0, 2], representative=0,
                preview="SQL: SELECT MIN(fastestLapTime) FROM results\nResult: 1 rows",
                member_positions=[0, 2], representative_position=0,
            ),
            Cluster(
                fingerprint="b", members=[1], representative=1,
                preview="SQL: SELECT MAX(fastestLapTime) FROM results\nResult: 1 rows",
                member_positions=[1], representative_position=1,
            ),
        ]

    def test_k_tests(self, motorsport_catalog):
        sub = full_projection(motorsport_catalog)
        statements = [f"The answer SQL query should check aspect {i}" for i in range(10)]
        gw = gw_with(
            {("k", "generate_unit_tests"): [f"<Answer>\n{statements!r}\n</Answer>"]}
        )
        tests = generate_unit_tests(QUESTION, HINT, sub, self._clusters(), 10, gw, "k")
        assert len(tests) == 10
        assert [t.index for t in tests] == list(range(10))

    def test_overlong_list_truncated(self, motorsport_catalog):
        sub = full_projection(motorsport_catalog)
        statements = [f"test {i}" for i in range(12)]
        gw = gw_with(
            {("k", "generate_unit_tests"): [f"<Answer>\n{statements!r}\n</Answer>"]}
        )
        tests = generate_unit_tests(QUESTION, HINT, sub, self._clusters(), 10, gw, "k")
        assert len(tests) == 10

    def test_parse_failure_empty(self, motorsport_catalog, caplog):
        sub = full_projection(motorsport_catalog)
        gw = gw_with(
            {
                ("k", "generate_unit_tests"): ["junk"],
                ("k#retry1", "generate_unit_tests"): ["junk"],
            }
        )
        with caplog.at_level(logging.WARNING):
            tests = generate_unit_tests(QUESTION, HINT, sub, self._clusters(), 5, gw, "k")
        assert tests == []

    def test_requires_clusters_and_positive_k(self, motorsport_catalog):
        sub = full_projection(motorsport_catalog)
        gw = gw_with({})
        with pytest.raises(ValueError):
            generate_unit_tests(QUESTION, HINT, sub, [], 5, gw, "k")
        with pytest.raises(ValueError):
            generate_unit_tests(QUESTION, HINT, sub, self._clusters(), 0, gw, "k")


class TestEvaluate:
    CANDS = [
        CandidateQuery(sql="SELECT 1", generation_index=0),
        CandidateQuery(sql="SELECT 2", generation_index=1),
        CandidateQuery(sql="SELECT 3", generation_index=2),
    ]
    TEST = UnitTest("The answer SQL query should use MIN", 0)

    def test_verdicts_in_order(self, motorsport_catalog):
        sub = full_projection(motorsport_catalog)
        gw = gw_with(
            {
                ("k", "evaluate_unit_test"): [
                    "<Answer>\nCandidate Response #1: Passed\n"
                    "Candidate Response #2: Failed\n"
                    "Candidate Response #3: Passed\n</Answer>"
                ]
            }
        )
        verdicts = evaluate_against_test(QUESTION, HINT, sub, self.CANDS, self.TEST, gw, "k")
        assert verdicts == [Verdict.PASSED, Verdict.FAILED, Verdict.PASSED]

    def test_short_verdicts_padded_failed(self, motorsport_catalog, caplog):
        sub = full_projection(motorsport_catalog)
        gw = gw_with(
            {
                ("k", "evaluate_unit_test"): [
                    "<Answer>\nCandidate Response #1: Passed\n"
                    "Candidate Response #2: Passed\n</Answer>"
                ]
            }
        )
        with caplog.at_level(logging.WARNING):
            verdicts = evaluate_against_test(
                QUESTION, HINT, sub, self.CANDS, self.TEST, gw, "k"
            )
        assert verdicts == [Verdict.PASSED, Verdict.PASSED, Verdict.FAILED]

    def test_parse_failure_all_failed(self, motorsport_catalog, caplog):
        sub = full_projection(motorsport_catalog)
        gw = gw_with(
            {
                ("k", "evaluate_unit_test"): ["junk"],
                ("k#retry1", "evaluate_unit_test"): ["junk"],
            }
        )
        with caplog.at_level(logging.WARNING):
            verdicts = evaluate_against_test(
                QUESTION, HINT, sub, self.CANDS, self.TEST, gw, "k"
            )
        assert verdicts == [Verdict.FAILED] * 3


class TestColumnProfile:
    def test_built_from_catalog_and_context(self, finance_db, finance_catalog):
        from querycrew.catalog import ingest_catalog_descriptions

        catalog = ingest_catalog_descriptions(
            finance_catalog, finance_db.parent / "database_description"
        )
        context = RetrievedContext(
            entities=[
                EntityMatch("average salary", "8968", "district", "A11", 0, 0.9)
            ]
        )
        profile = build_column_profile(catalog, "district", "A11", context)
        assert profile.matched_values == ["8968"]
        assert any("average salary" in d for d in profile.descriptions)
        rendered = profile.render()
        assert "Table name: district" in rendered
        assert "A11" in rendered
