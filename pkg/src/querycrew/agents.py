"""The nine tool behaviors of the four agent roles: information retrieval
(keyword extraction), schema selection (column filter, table select, column
select), candidate generation and revision, and unit-test generation and
evaluation.

Each tool is a pure orchestration over the gateway plus the structural
modules. Failure policy is asymmetric on purpose: schema-selection tools
fail open (keep everything) because over-pruning makes questions
unanswerable, while scoring tools fail closed (a candidate whose verdict
cannot be parsed counts as Failed).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

from .catalog import SchemaCatalog, SubSchema, project, render_schema_prompt
from .context_store import DescriptionHit
from .executor import ExecutionResult, FaultReport
from .gateway import Gateway, ParseError, SamplingParams
from .templates import DEFAULT_FEWSHOTS
from .value_index import EntityMatch

logger = logging.getLogger(__name__)


@dataclass
class Keyword:
    text: str
    source: str = "question"  # question | hint


@dataclass
class ColumnProfile:
    table: str
    column: str
    declared_type: str
    descriptions: list[str] = field(default_factory=list)
    matched_values: list[str] = field(default_factory=list)

    def render(self) -> str:
        lines = [
            f"Table name: {self.table}",
            f"Original column name: {self.column}",
            f"Data type: {self.declared_type or 'unknown'}",
        ]
        for desc in self.descriptions:
            lines.append(f"Description: {desc}")
        if self.matched_values:
            lines.append("Value examples: " + ", ".join(self.matched_values))
        return "\n".join(lines)


@dataclass
class CandidateQuery:
    sql: str
    reasoning: str = ""
    generation_index: int = 0
    revision_count: int = 0
    exec_result: ExecutionResult | None = None


@dataclass
class UnitTest:
    statement: str
    index: int


class Verdict(enum.Enum):
    PASSED = "Passed"
    FAILED = "Failed"


@dataclass
class Cluster:
    """Candidates sharing one execution-result fingerprint.

    `members` and `representative` are generation indices (the representative
    is the lowest one); the `*_position` fields locate the same candidates in
    the candidate list, which can differ when unparseable samples were
    dropped. The preview (SQL plus a short result excerpt) is what unit-test
    prompts see.
    """

    fingerprint: str
    members: list[int]
    representative: int
    preview: str = ""
    member_positions: list[int] = field(default_factory=list)
    representative_position: int = 0


@dataclass
class RetrievedContext:
    """What the IR stage found: value matches and catalog descriptions."""

    entities: list[EntityMatch] = field(default_factory=list)
    descriptions: list[DescriptionHit] = field(default_factory=list)

    def entity_lines(self) -> str:
        if not self.entities:
            return ""
        lines = ["Similar values found in the database:"]
        for e in self.entities:
            lines.append(f"- {e.keyword!r} matches {e.table}.{e.column} = {e.value!r}")
        return "\n".join(lines)


def extract_keywords(
    question: str, hint: str, gw: Gateway, scenario_key: str = "q+extract_keywords+0"
) -> list[Keyword]:
    """Keyword and keyphrase extraction from the question and hint.

    The output list is deduplicated and order-preserving. A parse failure
    after the retry yields an empty list so the pipeline can proceed without
    entity retrieval.
    """
    bindings = {
        "FEWSHOT_EXAMPLES": DEFAULT_FEWSHOTS["extract_keywords"],
        "QUESTION": question,
        "HINT": hint or "none",
    }
    try:
        items = gw.structured(
            "extract_keywords", bindings, SamplingParams(temperature=0.0), scenario_key
        )
    except ParseError:
        logger.warning("keyword extraction unparseable; continuing without keywords")
        return []
    keywords: list[Keyword] = []
    seen: set[str] = set()
    question_lower = question.lower()
    for item in items:
        text = str(item).strip()
        if not text or text.lower() in seen:
            continue
        seen.add(text.lower())
        source = "question" if text.lower() in question_lower else "hint"
        keywords.append(Keyword(text=text, source=source))
    return keywords


def filter_column(
    profile: ColumnProfile,
    question: str,
    hint: str,
    gw: Gateway,
    scenario_key: str = "q+filter_column+0",
) -> bool:
    """Single-column relevance decision; parse failures keep the column."""
    bindings = {
        "FEWSHOT_EXAMPLES": DEFAULT_FEWSHOTS["filter_column"],
        "COLUMN_PROFILE": profile.render(),
        "QUESTION": question,
        "HINT": hint or "none",
    }
    try:
        payload = gw.structured(
            "filter_column",
            bindings,
            SamplingParams(temperature=0.0),
            scenario_key,
            retry_on_parse_failure=False,
        )
    except ParseError:
        logger.warning(
            "filter_column unparseable for %s.%s; keeping column",
            profile.table,
            profile.column,
        )
        return True
    answer = str(payload.get("is_column_information_relevant", "Yes")).strip().lower()
    return answer != "no"


def select_tables(
    sub: SubSchema,
    question: str,
    hint: str,
    gw: Gateway,
    scenario_key: str = "q+select_tables+0",
    entities: Sequence[EntityMatch] = (),
    descriptions: Sequence[DescriptionHit] = (),
) -> list[str]:
    """Tables needed for the query, filtered to names that exist in `sub`.

    An empty intersection or a parse failure falls back to every table of
    the sub-schema: schema selection must not make a question unanswerable.
    """
    bindings = {
        "DATABASE_SCHEMA": render_schema_prompt(sub, entities, descriptions),
        "QUESTION": question,
        "HINT": hint or "none",
    }
    all_tables = sub.table_names()
    try:
        payload = gw.structured(
            "select_tables", bindings, SamplingParams(temperature=0.0), scenario_key
        )
    except ParseError:
        logger.warning("select_tables unparseable; keeping all tables")
        return all_tables
    raw_names = payload.get("table_names", [])
    if not isinstance(raw_names, list):
        logger.warning("select_tables returned no table list; keeping all tables")
        return all_tables
    by_ci = {t.lower(): t for t in all_tables}
    chosen: list[str] = []
    for name in raw_names:
        resolved = by_ci.get(str(name).strip().lower())
        if resolved is None:
            logger.warning("select_tables produced unknown table %r; dropped", name)
        elif resolved not in chosen:
            chosen.append(resolved)
    if not chosen:
        logger.warning("select_tables selected nothing that exists; keeping all tables")
        return all_tables
    return chosen


def select_columns(
    sub: SubSchema,
    question: str,
    hint: str,
    gw: Gateway,
    scenario_key: str = "q+select_columns+0",
    entities: Sequence[EntityMatch] = (),
    descriptions: Sequence[DescriptionHit] = (),
) -> dict[str, list[str]]:
    """Columns needed for the query, re-projected so PK/FK retention holds.

    The model's table->columns map is intersected with `sub`; unknown names
    are dropped with a warning and a parse failure returns `sub` unchanged.
    """
    bindings = {
        "DATABASE_SCHEMA": render_schema_prompt(sub, entities, descriptions),
        "QUESTION": question,
        "HINT": hint or "none",
    }
    try:
        payload = gw.structured(
            "select_columns", bindings, SamplingParams(temperature=0.0), scenario_key
        )
    except ParseError:
        logger.warning("select_columns unparseable; keeping sub-schema unchanged")
        return sub.as_requested()
    tables_ci = {t.lower(): t for t in sub.table_names()}
    requested: dict[str, list[str]] = {}
    for raw_table, raw_cols in payload.items():
        if raw_table == "chain_of_thought_reasoning" or not isinstance(raw_cols, list):
            continue
        table = tables_ci.get(str(raw_table).strip().lower())
        if table is None:
            logger.warning("select_columns produced unknown table %r; dropped", raw_table)
            continue
        cols_ci = {c.lower(): c for c in sub.selection[table]}
        kept: list[str] = []
        for raw_col in raw_cols:
            col = cols_ci.get(str(raw_col).strip().lower())
            if col is None:
                logger.warning(
                    "select_columns produced unknown column %s.%r; dropped",
                    table,
                    raw_col,
                )
            elif col not in kept:
                kept.append(col)
        requested[table] = kept
    if not requested:
        logger.warning("select_columns selected nothing that exists; keeping sub-schema")
        return sub.as_requested()
    reprojected = project(sub.parent, requested)
    return reprojected.as_requested()


def generate_candidate(
    question: str,
    hint: str,
    sub: SubSchema,
    context: RetrievedContext,
    gw: Gateway,
    params: SamplingParams,
    scenario_prefix: str = "q",
) -> list[CandidateQuery]:
    """Sample params.n_samples candidate queries, one completion call each.

    Samples whose JSON cannot be parsed are dropped; their generation index
    is not reused. If every sample drops, GenerationError is raised.
    """
    bindings = {
        "DATABASE_SCHEMA": render_schema_prompt(
            sub, context.entities, context.descriptions
        ),
        "QUESTION": question,
        "HINT": hint or "none",
    }
    single = SamplingParams(
        temperature=params.temperature, max_tokens=params.max_tokens, n_samples=1
    )
    candidates: list[CandidateQuery] = []
    for i in range(params.n_samples):
        scenario_key = f"{scenario_prefix}+generate_candidate+{i}"
        try:
            payload = gw.structured(
                "generate_candidate",
                bindings,
                single,
                scenario_key,
                retry_on_parse_failure=False,
            )
        except ParseError:
            logger.warning("candidate sample %d unparseable; dropped", i)
            continue
        sql = str(payload.get("SQL", "")).strip()
        if not sql:
            logger.warning("candidate sample %d has empty SQL; dropped", i)
            continue
        candidates.append(
            CandidateQuery(
                sql=sql,
                reasoning=str(payload.get("chain_of_thought_reasoning", "")),
                generation_index=i,
            )
        )
    if not candidates:
        raise GenerationError(f"all {params.n_samples} candidate samples failed to parse")
    return candidates


class GenerationError(Exception):
    """No candidate query could be parsed from any sample."""


def revise(
    question: str,
    hint: str,
    sub: SubSchema,
    context: RetrievedContext,
    candidate: CandidateQuery,
    issue: FaultReport,
    gw: Gateway,
    scenario_key: str = "q+revise+0",
) -> CandidateQuery:
    """One revision attempt for a faulty candidate.

    The prompt carries the executed result or error text. A parse failure
    returns the candidate unchanged (with a warning) rather than losing it.
    """
    bindings = {
        "DATABASE_SCHEMA": render_schema_prompt(
            sub, context.entities, context.descriptions
        ),
        "MISSING_ENTITIES": context.entity_lines(),
        "QUESTION": question,
        "EVIDENCE": hint or "none",
        "SQL": candidate.sql,
        "QUERY_RESULT": issue.detail,
    }
    try:
        payload = gw.structured(
            "revise",
            bindings,
            SamplingParams(temperature=0.0),
            scenario_key,
            retry_on_parse_failure=False,
        )
    except ParseError:
        logger.warning("revise output unparseable; keeping candidate as is")
        return candidate
    sql = str(payload.get("revised_SQL", "")).strip() or candidate.sql
    return CandidateQuery(
        sql=sql,
        reasoning=str(payload.get("chain_of_thought_reasoning", "")),
        generation_index=candidate.generation_index,
        revision_count=candidate.revision_count + 1,
    )


def generate_unit_tests(
    question: str,
    hint: str,
    sub: SubSchema,
    clusters: Sequence[Cluster],
    k: int,
    gw: Gateway,
    scenario_key: str = "q+generate_unit_tests+0",
) -> list[UnitTest]:
    """Up to k natural-language unit tests that tell the clusters apart."""
    if not clusters:
        raise ValueError("generate_unit_tests requires at least one cluster")
    if k < 1:
        raise ValueError("k must be >= 1")
    bindings = {
        "UNIT_TEST_CAP": k,
        "DATABASE_SCHEMA": render_schema_prompt(sub),
        "CANDIDATE_QUERIES": render_clusters(clusters),
        "QUESTION": question,
        "HINT": hint or "none",
    }
    try:
        statements = gw.structured(
            "generate_unit_tests", bindings, SamplingParams(temperature=0.0), scenario_key
        )
    except ParseError:
        logger.warning("unit test generation unparseable; no tests produced")
        return []
    statements = [s.strip() for s in statements if s and s.strip()]
    if len(statements) > k:
        statements = statements[:k]
    elif len(statements) < k:
        logger.warning("model produced %d unit tests, asked for %d", len(statements), k)
    return [UnitTest(statement=s, index=i) for i, s in enumerate(statements)]


def evaluate_against_test(
    question: str,
    hint: str,
    sub: SubSchema,
    candidates: Sequence[CandidateQuery],
    test: UnitTest,
    gw: Gateway,
    scenario_key: str = "q+evaluate+0",
) -> list[Verdict]:
    """Verdicts of every candidate against one unit test, in one call.

    The verdict list always has one entry per candidate: responses that omit
    a candidate score it as Failed, and an unparseable response fails every
    candidate for this test.
    """
    if not candidates:
        raise ValueError("evaluate_against_test requires at least one candidate")
    numbered = "\n\n".join(
        f"Candidate Response #{i + 1}:\n{c.sql}" for i, c in enumerate(candidates)
    )
    bindings = {
        "DATABASE_SCHEMA": render_schema_prompt(sub),
        "CANDIDATE_QUERIES": numbered,
        "QUESTION": question,
        "HINT": hint or "none",
        "UNIT_TEST": test.statement,
    }
    try:
        words = gw.structured(
            "evaluate_unit_test", bindings, SamplingParams(temperature=0.0), scenario_key
        )
    except ParseError:
        logger.warning("verdicts unparseable for test %d; all candidates Failed", test.index)
        return [Verdict.FAILED] * len(candidates)
    verdicts = [Verdict.PASSED if w == "Passed" else Verdict.FAILED for w in words]
    if len(verdicts) < len(candidates):
        logger.warning(
            "only %d verdicts for %d candidates; padding with Failed",
            len(verdicts),
            len(candidates),
        )
        verdicts.extend([Verdict.FAILED] * (len(candidates) - len(verdicts)))
    return verdicts[: len(candidates)]


def render_clusters(clusters: Sequence[Cluster]) -> str:
    return "\n\n".join(
        f"Cluster #{i + 1} ({len(c.members)} candidates):\n{c.preview}"
        for i, c in enumerate(clusters)
    )


def build_column_profile(
    catalog: SchemaCatalog,
    table: str,
    column: str,
    context: RetrievedContext,
) -> ColumnProfile:
    col = catalog.table(table).column(column)
    descriptions = []
    if col.expanded_name:
        descriptions.append(f"expanded column name: {col.expanded_name}")
    if col.column_description:
        descriptions.append(col.column_description)
    if col.value_description:
        descriptions.append(f"value description: {col.value_description}")
    matched = sorted(
        {e.value for e in context.entities if e.table == table and e.column == column}
    )
    return ColumnProfile(
        table=table,
        column=column,
        declared_type=col.declared_type,
        descriptions=descriptions,
        matched_values=matched,
    )
