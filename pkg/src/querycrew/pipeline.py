"""Team assembly and the question-to-SQL run loop.

A run walks the configured stages: information retrieval (keywords, value
matches, catalog descriptions), optional schema-selection funnel (column
filter, table select, column select, with linking columns always retained),
candidate generation with execution-guided revision, result clustering, and
optional unit-test scoring. Every completion call is recorded so a trace can
account for LLM usage exactly.

Scenario keys passed to the gateway are deterministic:
`<qid>+<tool>+<attempt>`, where attempt is the sample index for generation,
`<table>.<column>` for column filtering, `<candidate>.<revision>` for
revision, and the test index for evaluation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import agents, executor
from .agents import CandidateQuery, Cluster, RetrievedContext, Verdict
from .caching import (
    CONTEXT_STORE_MAGIC,
    VALUE_INDEX_MAGIC,
    config_hash,
    file_sha256,
    load_envelope,
    save_envelope,
)
from .catalog import (
    SchemaCatalog,
    SubSchema,
    full_projection,
    ingest_catalog_descriptions,
    introspect_database,
    project,
)
from .context_store import (
    ContextStore,
    HashingEmbedder,
    RemoteEmbedder,
    build_context_store,
    retrieve_context,
)
from .gateway import Gateway, HttpChatBackend, MockBackend, SamplingParams
from .value_index import IndexConfig, ValueIndex, build_value_index, retrieve_entities

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1

TEAMS = {
    "IR_CG_UT": frozenset({"IR", "CG", "UT"}),
    "IR_SS_CG": frozenset({"IR", "SS", "CG"}),
    "IR_SS_CG_UT": frozenset({"IR", "SS", "CG", "UT"}),
    "CG_only": frozenset({"CG"}),
}

TOGGLEABLE_TOOLS = (
    "retrieve_entity",
    "retrieve_context",
    "filter_column",
    "select_tables",
    "select_columns",
    "revise",
)

REVISABLE_FAULTS = {
    executor.SYNTAX_ERROR,
    executor.RUNTIME_ERROR,
    executor.TIMEOUT,
    executor.EMPTY_RESULT,
}


class PipelineError(Exception):
    """The run could not produce any SQL at all."""


@dataclass
class PipelineConfig:
    team: str = "IR_CG_UT"
    n_candidates: int = 20
    n_unit_tests: int = 10
    max_revisions: int = 3
    compare_mode: str = "set"
    order_sensitive: bool = False
    execution_timeout_s: float = 30.0
    row_cap: int = 10_000
    context_k: int = 10
    generation_temperature: float = 1.0
    max_tokens: int = 2048
    disabled_tools: frozenset[str] = frozenset()
    index: IndexConfig = field(default_factory=IndexConfig)
    embedder: dict = field(default_factory=lambda: {"kind": "local", "dimension": 256})
    models: dict = field(default_factory=dict)
    db_root: str = ""
    seed: int = 0

    def __post_init__(self) -> None:
        if self.team not in TEAMS:
            raise ValueError(f"unknown team {self.team!r}; expected one of {sorted(TEAMS)}")
        unknown = set(self.disabled_tools) - set(TOGGLEABLE_TOOLS)
        if unknown:
            raise ValueError(f"unknown tool toggles: {sorted(unknown)}")
        if "UT" in TEAMS[self.team] and self.n_candidates < 2:
            logger.warning(
                "unit testing with n_candidates=%d cannot differentiate candidates",
                self.n_candidates,
            )

    @property
    def roles(self) -> frozenset[str]:
        return TEAMS[self.team]

    def tool_enabled(self, tool: str) -> bool:
        return tool not in self.disabled_tools

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "team": self.team,
            "n_candidates": self.n_candidates,
            "n_unit_tests": self.n_unit_tests,
            "max_revisions": self.max_revisions,
            "compare_mode": self.compare_mode,
            "order_sensitive": self.order_sensitive,
            "execution_timeout_s": self.execution_timeout_s,
            "row_cap": self.row_cap,
            "context_k": self.context_k,
            "generation_temperature": self.generation_temperature,
            "max_tokens": self.max_tokens,
            "disabled_tools": sorted(self.disabled_tools),
            "index": self.index.to_dict(),
            "embedder": dict(self.embedder),
            "models": self.models,
            "db_root": self.db_root,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "PipelineConfig":
        version = payload.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {version}")
        index = IndexConfig(**payload.get("index", {}))
        return cls(
            team=payload.get("team", "IR_CG_UT"),
            n_candidates=payload.get("n_candidates", 20),
            n_unit_tests=payload.get("n_unit_tests", 10),
            max_revisions=payload.get("max_revisions", 3),
            compare_mode=payload.get("compare_mode", "set"),
            order_sensitive=payload.get("order_sensitive", False),
            execution_timeout_s=payload.get("execution_timeout_s", 30.0),
            row_cap=payload.get("row_cap", 10_000),
            context_k=payload.get("context_k", 10),
            generation_temperature=payload.get("generation_temperature", 1.0),
            max_tokens=payload.get("max_tokens", 2048),
            disabled_tools=frozenset(payload.get("disabled_tools", [])),
            index=index,
            embedder=payload.get("embedder", {"kind": "local", "dimension": 256}),
            models=payload.get("models", {}),
            db_root=payload.get("db_root", ""),
            seed=payload.get("seed", 0),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")


def build_embedder(config: PipelineConfig):
    spec = config.embedder
    kind = spec.get("kind", "local")
    if kind in ("local", "deterministic-local"):
        return HashingEmbedder(dimension=spec.get("dimension", 256))
    if kind == "remote":
        return RemoteEmbedder(
            base_url=spec["base_url"],
            model=spec.get("model", "text-embedding-3-small"),
            dimension=spec.get("dimension", 1536),
            api_key_env=spec.get("api_key_env", "EMBEDDINGS_API_KEY"),
        )
    raise ValueError(f"unknown embedder kind {kind!r}")


def build_gateway(config: PipelineConfig, mock_dir: str | Path | None = None) -> Gateway:
    """Backends per tool from config; a mock fixture dir overrides them all."""
    if mock_dir is not None:
        return Gateway.single(MockBackend(fixture_dir=mock_dir))
    backends = {}
    models = config.models or {"default": {"kind": "mock"}}
    for name, spec in models.items():
        kind = spec.get("kind", "http")
        if kind == "mock":
            backends[name] = MockBackend(
                fixture_dir=spec.get("fixture_dir"),
                responses=spec.get("responses"),
            )
        elif kind == "http":
            backends[name] = HttpChatBackend(
                base_url=spec["base_url"],
                model=spec.get("model", "gpt-4o-mini"),
                api_key_env=spec.get("api_key_env", "LLM_API_KEY"),
            )
        else:
            raise ValueError(f"unknown backend kind {kind!r}")
    return Gateway(backends=backends)


@dataclass
class DbArtifacts:
    """Per-database preprocessing products the pipeline consumes."""

    db_file: Path
    catalog: SchemaCatalog
    value_index: ValueIndex
    context_store: ContextStore | None


def ensure_artifacts(
    db_file: str | Path,
    config: PipelineConfig,
    cache_dir: str | Path | None = None,
    description_dir: str | Path | None = None,
) -> DbArtifacts:
    """Load cached preprocessing artifacts, rebuilding on any mismatch.

    Caches are keyed by the database file hash and the relevant config so a
    schema, content, or config change invalidates them automatically.
    """
    db_file = Path(db_file)
    catalog = introspect_database(db_file)
    if description_dir is None:
        default_desc = db_file.parent / "database_description"
        description_dir = default_desc if default_desc.is_dir() else None
    if description_dir is not None:
        catalog = ingest_catalog_descriptions(catalog, description_dir)

    embedder = build_embedder(config)
    db_hash = file_sha256(db_file)
    index_header = {"db": db_hash, "config": config_hash(config.index.to_dict())}
    store_header = {
        "db": db_hash,
        "config": config_hash({"embedder": config.embedder, "k": "context"}),
    }

    cache_dir = Path(cache_dir) if cache_dir else db_file.parent
    index_path = cache_dir / f"{db_file.stem}.value_index.qcx"
    store_path = cache_dir / f"{db_file.stem}.context_store.qcx"

    value_index = load_envelope(index_path, VALUE_INDEX_MAGIC, index_header)
    if value_index is None:
        value_index = build_value_index(catalog, db_file, config.index)
        try:
            cache_dir.mkdir(parents=True, exist_ok=True)
            save_envelope(index_path, VALUE_INDEX_MAGIC, index_header, value_index)
        except OSError as exc:
            logger.warning("could not persist value index cache: %s", exc)

    store = load_envelope(store_path, CONTEXT_STORE_MAGIC, store_header)
    if store is None:
        store = build_context_store(catalog, embedder)
        try:
            cache_dir.mkdir(parents=True, exist_ok=True)
            # embedders may hold live sessions; persist the store without one
            bare = ContextStore(items=store.items, vectors=store.vectors, embedder=None)
            save_envelope(store_path, CONTEXT_STORE_MAGIC, store_header, bare)
        except OSError as exc:
            logger.warning("could not persist context store cache: %s", exc)
    store.embedder = embedder

    return DbArtifacts(
        db_file=db_file, catalog=catalog, value_index=value_index, context_store=store
    )


@dataclass
class StageRecord:
    stage: str
    n_tables: int
    n_columns: int
    selection: dict[str, list[str]]


@dataclass
class RunTrace:
    question_id: str
    selected_sql: str = ""
    selected_index: int = -1
    llm_calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    stages: list[StageRecord] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)
    candidates: list[dict] = field(default_factory=list)
    clusters: list[dict] = field(default_factory=list)
    scores: list[int] = field(default_factory=list)
    n_unit_tests: int = 0
    revisions_total: int = 0
    duration_s: float = 0.0

    def to_dict(self, include_timing: bool = True) -> dict:
        payload = {
            "question_id": self.question_id,
            "selected_sql": self.selected_sql,
            "selected_index": self.selected_index,
            "llm_calls": self.llm_calls,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "stages": [
                {
                    "stage": s.stage,
                    "n_tables": s.n_tables,
                    "n_columns": s.n_columns,
                    "selection": s.selection,
                }
                for s in self.stages
            ],
            "records": self.records,
            "candidates": self.candidates,
            "clusters": self.clusters,
            "scores": self.scores,
            "n_unit_tests": self.n_unit_tests,
            "revisions_total": self.revisions_total,
        }
        if include_timing:
            payload["duration_s"] = self.duration_s
        return payload


@dataclass
class RunEnv:
    """Everything a revision attempt needs besides the candidate itself."""

    question: str
    hint: str
    sub: SubSchema
    context: RetrievedContext
    db_file: Path
    gateway: Gateway
    qid: str


def run(
    question: str,
    hint: str,
    db: str | Path | DbArtifacts,
    config: PipelineConfig,
    gateway: Gateway,
    qid: str = "q",
) -> tuple[str, RunTrace]:
    """Convert one question to SQL under the configured team.

    Returns the selected SQL plus a trace whose llm_calls equals the number
    of completion invocations made during this run.
    """
    import time as _time

    start = _time.perf_counter()
    if isinstance(db, DbArtifacts):
        artifacts = db
    else:
        artifacts = ensure_artifacts(db, config)
    catalog = artifacts.catalog
    roles = config.roles
    trace = RunTrace(question_id=qid)
    calls_before = len(gateway.calls)

    # --- information retrieval ------------------------------------------
    context = RetrievedContext()
    if "IR" in roles:
        keywords = agents.extract_keywords(
            question, hint, gateway, scenario_key=f"{qid}+extract_keywords+0"
        )
        if keywords and config.tool_enabled("retrieve_entity"):
            context.entities = retrieve_entities(
                artifacts.value_index,
                [k.text for k in keywords],
                embedder=artifacts.context_store.embedder
                if artifacts.context_store
                else None,
                cfg=config.index,
            )
        if artifacts.context_store is not None and config.tool_enabled("retrieve_context"):
            query_text = f"{question} {hint}".strip()
            context.descriptions = retrieve_context(
                artifacts.context_store, query_text, config.context_k
            )

    sub = full_projection(catalog)
    trace.stages.append(_stage_record("initial", sub))

    # --- schema selection funnel ----------------------------------------
    # `requested` carries only the semantically chosen columns; the projected
    # sub re-adds linking columns each stage. Tracking the two separately lets
    # FK columns drop out once their counterpart table leaves the selection.
    if "SS" in roles:
        requested = sub.as_requested()
        if config.tool_enabled("filter_column"):
            requested = _filter_columns_stage(
                catalog, sub, question, hint, context, gateway, qid
            )
            sub = project(catalog, requested)
            trace.stages.append(_stage_record("filter_column", sub))
        if config.tool_enabled("select_tables"):
            tables = agents.select_tables(
                sub,
                question,
                hint,
                gateway,
                scenario_key=f"{qid}+select_tables+0",
                entities=context.entities,
                descriptions=context.descriptions,
            )
            requested = {t: requested[t] for t in tables}
            sub = project(catalog, requested)
            trace.stages.append(_stage_record("select_tables", sub))
        if config.tool_enabled("select_columns"):
            requested = agents.select_columns(
                sub,
                question,
                hint,
                gateway,
                scenario_key=f"{qid}+select_columns+0",
                entities=context.entities,
                descriptions=context.descriptions,
            )
            sub = project(catalog, requested)
            trace.stages.append(_stage_record("select_columns", sub))

    # --- candidate generation and revision ------------------------------
    temperature = config.generation_temperature if config.n_candidates > 1 else 0.0
    params = SamplingParams(
        temperature=temperature,
        max_tokens=config.max_tokens,
        n_samples=config.n_candidates,
    )
    try:
        candidates = agents.generate_candidate(
            question, hint, sub, context, gateway, params, scenario_prefix=qid
        )
    except agents.GenerationError as exc:
        raise PipelineError(str(exc)) from exc

    env = RunEnv(question, hint, sub, context, artifacts.db_file, gateway, qid)
    for i, candidate in enumerate(candidates):
        candidate.exec_result = executor.execute(
            artifacts.db_file,
            candidate.sql,
            timeout=config.execution_timeout_s,
            row_cap=config.row_cap,
        )
        if config.tool_enabled("revise"):
            candidates[i] = revise_loop(candidate, env, config)
    trace.revisions_total = sum(c.revision_count for c in candidates)

    clusters = cluster_by_result(candidates)

    # --- selection -------------------------------------------------------
    verdict_matrix: list[list[Verdict]] = []
    tests: list = []
    if "UT" in roles and len(clusters) > 1:
        tests = agents.generate_unit_tests(
            question,
            hint,
            sub,
            clusters,
            config.n_unit_tests,
            gateway,
            scenario_key=f"{qid}+generate_unit_tests+0",
        )
        for test in tests:
            verdict_matrix.append(
                agents.evaluate_against_test(
                    question,
                    hint,
                    sub,
                    candidates,
                    test,
                    gateway,
                    scenario_key=f"{qid}+evaluate+{test.index}",
                )
            )
        winner = score_and_select(candidates, verdict_matrix, clusters)
    elif "UT" in roles:
        winner = clusters[0].representative_position
    else:
        winner = _first_reasonable(candidates)

    trace.n_unit_tests = len(tests)
    trace.scores = [
        sum(1 for row in verdict_matrix if row[i] is Verdict.PASSED)
        for i in range(len(candidates))
    ]
    trace.selected_index = winner
    trace.selected_sql = candidates[winner].sql
    trace.candidates = [
        {
            "generation_index": c.generation_index,
            "sql": c.sql,
            "revision_count": c.revision_count,
            "status": c.exec_result.status if c.exec_result else "unknown",
        }
        for c in candidates
    ]
    trace.clusters = [
        {
            "fingerprint": c.fingerprint,
            "members": list(c.members),
            "representative": c.representative,
        }
        for c in clusters
    ]
    new_records = gateway.calls[calls_before:]
    trace.records = [
        {
            "template_id": r.template_id,
            "scenario_key": r.scenario_key,
            "backend_id": r.backend_id,
            "n_samples": r.n_samples,
            "prompt_tokens": r.prompt_tokens,
            "completion_tokens": r.completion_tokens,
        }
        for r in new_records
    ]
    trace.llm_calls = len(new_records)
    trace.prompt_tokens = sum(r.prompt_tokens for r in new_records)
    trace.completion_tokens = sum(r.completion_tokens for r in new_records)
    trace.duration_s = _time.perf_counter() - start
    return trace.selected_sql, trace


def _stage_record(stage: str, sub: SubSchema) -> StageRecord:
    return StageRecord(
        stage=stage,
        n_tables=sub.n_tables(),
        n_columns=sub.n_columns(),
        selection=sub.as_requested(),
    )


def _filter_columns_stage(
    catalog: SchemaCatalog,
    sub: SubSchema,
    question: str,
    hint: str,
    context: RetrievedContext,
    gateway: Gateway,
    qid: str,
) -> dict[str, list[str]]:
    """Per-column relevance votes; linking columns bypass the model call.

    Returns only the Yes-voted non-linking columns per table (projection
    re-adds the linking columns). Every table keeps an entry so no table
    leaves the schema at this stage.
    """
    requested: dict[str, list[str]] = {}
    for table in sub.table_names():
        linking = catalog.linking_columns(table)
        kept: list[str] = []
        for column in sub.selection[table]:
            if column in linking:
                continue
            profile = agents.build_column_profile(catalog, table, column, context)
            relevant = agents.filter_column(
                profile,
                question,
                hint,
                gateway,
                scenario_key=f"{qid}+filter_column+{table}.{column}",
            )
            if relevant:
                kept.append(column)
        requested[table] = kept
    return requested


def revise_loop(
    candidate: CandidateQuery, env: RunEnv, config: PipelineConfig
) -> CandidateQuery:
    """Revise and re-execute until the fault clears or revisions run out.

    The last version is returned even if still faulty; an ok-and-nonempty
    candidate comes back untouched.
    """
    current = candidate
    while current.revision_count < config.max_revisions:
        fault = executor.classify_fault(current.exec_result)
        if fault is None or fault.kind not in REVISABLE_FAULTS:
            break
        revised = agents.revise(
            env.question,
            env.hint,
            env.sub,
            env.context,
            current,
            fault,
            env.gateway,
            scenario_key=(
                f"{env.qid}+revise+{current.generation_index}."
                f"{current.revision_count + 1}"
            ),
        )
        if revised is current:
            break  # unparseable revision: stop burning budget
        revised.exec_result = executor.execute(
            env.db_file,
            revised.sql,
            timeout=config.execution_timeout_s,
            row_cap=config.row_cap,
        )
        current = revised
    return current


def cluster_by_result(candidates: Sequence[CandidateQuery]) -> list[Cluster]:
    """Partition executed candidates by result fingerprint.

    Clusters are ordered by size descending, then by their representative
    (the member with the lowest generation index).
    """
    groups: dict[str, list[int]] = {}
    for pos, candidate in enumerate(candidates):
        if candidate.exec_result is None:
            raise ValueError("cluster_by_result requires executed candidates")
        digest = executor.fingerprint(candidate.exec_result).digest
        groups.setdefault(digest, []).append(pos)
    clusters = []
    for digest, members in groups.items():
        rep_pos = min(members, key=lambda p: candidates[p].generation_index)
        rep = candidates[rep_pos]
        preview = f"SQL: {rep.sql}\nResult: {executor.preview_rows(rep.exec_result)}"
        clusters.append(
            Cluster(
                fingerprint=digest,
                members=[candidates[p].generation_index for p in members],
                representative=rep.generation_index,
                preview=preview,
                member_positions=list(members),
                representative_position=rep_pos,
            )
        )
    clusters.sort(key=lambda c: (-len(c.members), c.representative))
    return clusters


def score_and_select(
    candidates: Sequence[CandidateQuery],
    verdicts: Sequence[Sequence[Verdict]],
    clusters: Sequence[Cluster],
) -> int:
    """Winner position by unit-test score.

    score(c) = number of Passed verdicts across tests. Ties prefer the
    candidate in the largest cluster, then the lowest generation index. With
    no tests at all the representative of the largest cluster wins.
    """
    for row in verdicts:
        if len(row) != len(candidates):
            raise ValueError(
                f"verdict row has {len(row)} entries for {len(candidates)} candidates"
            )
    if not verdicts:
        return clusters[0].representative_position
    cluster_size_of: dict[int, int] = {}
    for cluster in clusters:
        for pos in cluster.member_positions:
            cluster_size_of[pos] = len(cluster.members)
    best_pos = 0
    best_key: tuple | None = None
    for pos, candidate in enumerate(candidates):
        score = sum(1 for row in verdicts if row[pos] is Verdict.PASSED)
        key = (-score, -cluster_size_of.get(pos, 1), candidate.generation_index)
        if best_key is None or key < best_key:
            best_key = key
            best_pos = pos
    return best_pos


def _first_reasonable(candidates: Sequence[CandidateQuery]) -> int:
    """First ok-and-nonempty candidate, else first ok, else the first."""
    for pos, c in enumerate(candidates):
        if c.exec_result is not None and c.exec_result.is_ok() and c.exec_result.rows:
            return pos
    for pos, c in enumerate(candidates):
        if c.exec_result is not None and c.exec_result.is_ok():
            return pos
    return 0
