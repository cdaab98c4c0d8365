"""Benchmark harness: dataset loading, execution accuracy, Pass@k, schema
selection precision/recall, stratified subsampling, synthetic large-schema
construction, and resumable benchmark sweeps with report emission.

Sweeps write three artifacts under the output directory: `predictions.jsonl`
(one deterministic line per question, reruns skip completed ids),
`report.json` (aggregate metrics), and `traces/<qid>.json` (full per-question
run traces including timings).
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import executor, pipeline
from .catalog import ColumnInfo, FkEdge, SchemaCatalog, SubSchema, TableInfo, project
from .gateway import Gateway
from .pipeline import DbArtifacts, PipelineConfig, RunTrace
from .sql_items import extract_sql_items

logger = logging.getLogger(__name__)

DIFFICULTIES = ("simple", "moderate", "challenging")


class DatasetError(Exception):
    """Dataset file missing fields or referencing unusable databases."""


class SynthesisError(Exception):
    """Large-schema synthesis could not satisfy its constraints."""


@dataclass
class BenchmarkItem:
    question_id: str
    db_id: str
    question: str
    evidence: str
    gold_sql: str
    difficulty: str = "simple"


@dataclass
class SchemaPR:
    table_recall: float
    table_precision: float
    column_recall: float
    column_precision: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (
            self.table_recall,
            self.table_precision,
            self.column_recall,
            self.column_precision,
        )


def load_dataset(path: str | Path, fmt: str = "bird") -> list[BenchmarkItem]:
    """Load a benchmark JSON array.

    The bird format carries question/evidence/SQL/db_id/difficulty; the
    spider format maps query->gold_sql with empty evidence (spider databases
    ship no catalog descriptions, so context retrieval should be disabled
    for those runs).
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    items: list[BenchmarkItem] = []
    for i, row in enumerate(raw):
        if fmt == "bird":
            items.append(
                BenchmarkItem(
                    question_id=str(row.get("question_id", i)),
                    db_id=row["db_id"],
                    question=row["question"],
                    evidence=row.get("evidence", "") or "",
                    gold_sql=row.get("SQL") or row.get("sql") or "",
                    difficulty=row.get("difficulty", "simple"),
                )
            )
        elif fmt == "spider":
            items.append(
                BenchmarkItem(
                    question_id=str(row.get("question_id", i)),
                    db_id=row["db_id"],
                    question=row["question"],
                    evidence="",
                    gold_sql=row.get("query") or row.get("SQL") or "",
                    difficulty="simple",
                )
            )
        else:
            raise ValueError(f"unknown dataset format {fmt!r}")
    return items


def validate_gold(
    items: Sequence[BenchmarkItem], db_file_for: dict[str, Path]
) -> list[str]:
    """Question ids whose gold SQL does not execute ok on its database."""
    flagged = []
    for item in items:
        db_file = db_file_for.get(item.db_id)
        if db_file is None:
            flagged.append(item.question_id)
            continue
        result = executor.execute(db_file, item.gold_sql)
        if not result.is_ok():
            logger.warning(
                "gold SQL for %s fails: %s", item.question_id, result.error_text
            )
            flagged.append(item.question_id)
    return flagged


def execution_accuracy(
    pred_sql: str,
    gold_sql: str,
    db_file: str | Path,
    compare_mode: str = "set",
    timeout: float = executor.DEFAULT_TIMEOUT_S,
) -> int:
    """1 iff the predicted query's result matches the gold query's result."""
    gold = executor.execute(db_file, gold_sql, timeout=timeout)
    pred = executor.execute(db_file, pred_sql, timeout=timeout)
    return 1 if executor.results_match(pred, gold, mode=compare_mode) else 0


def pass_at_k(candidate_ex_lists: Sequence[Sequence[int]], k: int) -> float:
    """Fraction of items whose first k candidates contain a correct one."""
    if not candidate_ex_lists:
        return 0.0
    hits = 0
    for ex_list in candidate_ex_lists:
        if len(ex_list) < k:
            raise ValueError(f"candidate list of length {len(ex_list)} is shorter than k={k}")
        if any(ex_list[:k]):
            hits += 1
    return hits / len(candidate_ex_lists)


def extract_gold_schema_items(
    gold_sql: str, catalog: SchemaCatalog
) -> tuple[set[str], set[tuple[str, str]]]:
    """Tables and columns used by a gold query, resolved through aliases.

    Unresolvable references raise DatasetError so the item can be excluded
    from precision/recall aggregates instead of skewing them.
    """
    items = extract_sql_items(gold_sql, catalog)
    if items.unresolved:
        raise DatasetError(f"unresolved references {items.unresolved} in {gold_sql!r}")
    return items.tables, items.columns


def schema_selection_pr(
    selected: SubSchema | dict[str, list[str]],
    gold_tables: set[str],
    gold_columns: set[tuple[str, str]],
) -> SchemaPR:
    """Precision and recall of a selection against gold tables/columns."""
    if not gold_tables or not gold_columns:
        raise ValueError("schema PR needs nonempty gold items")
    selection = selected.selection if isinstance(selected, SubSchema) else selected
    sel_tables = set(selection)
    sel_columns = {(t, c) for t, cols in selection.items() for c in cols}
    t_hit = len(sel_tables & gold_tables)
    c_hit = len(sel_columns & gold_columns)
    return SchemaPR(
        table_recall=t_hit / len(gold_tables),
        table_precision=t_hit / len(sel_tables) if sel_tables else 0.0,
        column_recall=c_hit / len(gold_columns),
        column_precision=c_hit / len(sel_columns) if sel_columns else 0.0,
    )


def subsample_dev(
    items: Sequence[BenchmarkItem], fraction: float, seed: int
) -> list[BenchmarkItem]:
    """Per-database stratified sample of ceil(fraction * n_db) items.

    Deterministic under the seed; fraction 1.0 returns the full set in
    original order.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1.0:
        return list(items)
    by_db: dict[str, list[BenchmarkItem]] = {}
    for item in items:
        by_db.setdefault(item.db_id, []).append(item)
    chosen_ids: set[str] = set()
    for db_id in sorted(by_db):
        rows = sorted(by_db[db_id], key=lambda it: it.question_id)
        take = math.ceil(fraction * len(rows))
        rng = random.Random(f"{seed}:{db_id}")
        rng.shuffle(rows)
        chosen_ids.update(it.question_id for it in rows[:take])
    return [it for it in items if it.question_id in chosen_ids]


def synthesize_large_schema(
    catalogs: Sequence[SchemaCatalog],
    target_columns: int,
    required: SubSchema | None,
    seed: int,
    merged_db_id: str = "synthetic_merge",
) -> SchemaCatalog:
    """Merge catalogs into one schema with exactly target_columns columns.

    Table names are prefixed with their source db id to avoid collisions.
    The required sub-schema (plus its PK/FK closure) is always retained;
    remaining columns are drawn deterministically under the seed. FK edges
    and PK markers survive only where both endpoints survive.
    """
    total = sum(c.column_count() for c in catalogs)
    if total < target_columns:
        raise SynthesisError(
            f"sources provide {total} columns, target is {target_columns}"
        )

    required_cols: set[tuple[str, str, str]] = set()  # (db_id, table, column)
    if required is not None:
        source = required.parent
        closure = project(source, required.as_requested())
        for table, cols in closure.selection.items():
            for col in cols:
                required_cols.add((source.db_id, table, col))
    if len(required_cols) > target_columns:
        raise SynthesisError(
            f"required sub-schema needs {len(required_cols)} columns, "
            f"target is only {target_columns}"
        )

    pool: list[tuple[str, str, str]] = []
    for catalog in catalogs:
        for tinfo in catalog.tables:
            for col in tinfo.columns:
                key = (catalog.db_id, tinfo.name, col.name)
                if key not in required_cols:
                    pool.append(key)
    rng = random.Random(seed)
    rng.shuffle(pool)
    chosen = set(required_cols)
    for key in pool:
        if len(chosen) >= target_columns:
            break
        chosen.add(key)

    tables: list[TableInfo] = []
    edges: list[FkEdge] = []
    surviving: set[tuple[str, str, str]] = set()
    for catalog in catalogs:
        for tinfo in catalog.tables:
            kept_cols = [
                col for col in tinfo.columns if (catalog.db_id, tinfo.name, col.name) in chosen
            ]
            if not kept_cols:
                continue
            prefix = f"{catalog.db_id}__{tinfo.name}"
            kept_names = {c.name for c in kept_cols}
            new_pk = [c for c in tinfo.primary_key if c in kept_names]
            columns = [
                ColumnInfo(
                    name=col.name,
                    declared_type=col.declared_type,
                    expanded_name=col.expanded_name,
                    column_description=col.column_description,
                    value_description=col.value_description,
                    is_pk=col.name in new_pk,
                    fk_targets=[],
                    sample_values=list(col.sample_values),
                )
                for col in kept_cols
            ]
            tables.append(TableInfo(name=prefix, columns=columns, primary_key=new_pk))
            surviving.update((catalog.db_id, tinfo.name, c.name) for c in kept_cols)
        for edge in catalog.fk_edges:
            src = (catalog.db_id, edge.src_table, edge.src_column)
            dst = (catalog.db_id, edge.dst_table, edge.dst_column)
            if src in chosen and dst in chosen:
                edges.append(
                    FkEdge(
                        f"{catalog.db_id}__{edge.src_table}",
                        edge.src_column,
                        f"{catalog.db_id}__{edge.dst_table}",
                        edge.dst_column,
                    )
                )
    merged = SchemaCatalog(db_id=merged_db_id, tables=tables, fk_edges=edges)
    for tinfo in merged.tables:
        for col in tinfo.columns:
            col.fk_targets = [
                f"{e.dst_table}.{e.dst_column}"
                for e in merged.fk_edges
                if e.src_table == tinfo.name and e.src_column == col.name
            ]
    if merged.column_count() != target_columns:
        raise SynthesisError(
            f"merge produced {merged.column_count()} columns, wanted {target_columns}"
        )
    return merged


@dataclass
class ItemOutcome:
    question_id: str
    db_id: str
    difficulty: str
    predicted_sql: str
    ex: int
    llm_calls: int
    prompt_tokens: int
    completion_tokens: int
    candidate_ex: list[int] = field(default_factory=list)
    error: str = ""

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "question_id": self.question_id,
                "db_id": self.db_id,
                "difficulty": self.difficulty,
                "predicted_sql": self.predicted_sql,
                "ex": self.ex,
                "llm_calls": self.llm_calls,
                "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
                "candidate_ex": self.candidate_ex,
                "error": self.error,
            },
            sort_keys=True,
            ensure_ascii=False,
        )

    @classmethod
    def from_json_line(cls, line: str) -> "ItemOutcome":
        row = json.loads(line)
        return cls(
            question_id=row["question_id"],
            db_id=row["db_id"],
            difficulty=row["difficulty"],
            predicted_sql=row["predicted_sql"],
            ex=row["ex"],
            llm_calls=row["llm_calls"],
            prompt_tokens=row["prompt_tokens"],
            completion_tokens=row["completion_tokens"],
            candidate_ex=list(row.get("candidate_ex", [])),
            error=row.get("error", ""),
        )


@dataclass
class Report:
    outcomes: list[ItemOutcome]
    ex_overall: float
    ex_by_difficulty: dict[str, float]
    counts_by_difficulty: dict[str, int]
    pass_at: dict[str, float]
    mean_llm_calls: float
    mean_prompt_tokens: float
    mean_completion_tokens: float
    schema_pr_per_stage: dict[str, dict[str, float]] = field(default_factory=dict)
    flagged_gold: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_items": len(self.outcomes),
            "ex_overall": self.ex_overall,
            "ex_by_difficulty": self.ex_by_difficulty,
            "counts_by_difficulty": self.counts_by_difficulty,
            "pass_at": self.pass_at,
            "mean_llm_calls": self.mean_llm_calls,
            "mean_prompt_tokens": self.mean_prompt_tokens,
            "mean_completion_tokens": self.mean_completion_tokens,
            "schema_pr_per_stage": self.schema_pr_per_stage,
            "flagged_gold": self.flagged_gold,
        }


def resolve_db_file(db_root: str | Path, db_id: str) -> Path:
    """Database file under a BIRD-style root: <root>/<db_id>/<db_id>.sqlite."""
    root = Path(db_root)
    for candidate in (
        root / db_id / f"{db_id}.sqlite",
        root / db_id / f"{db_id}.db",
        root / f"{db_id}.sqlite",
        root / f"{db_id}.db",
    ):
        if candidate.is_file():
            return candidate
    raise DatasetError(f"no database file for {db_id!r} under {root}")


def run_benchmark(
    items: Sequence[BenchmarkItem],
    config: PipelineConfig,
    out_dir: str | Path,
    db_root: str | Path | None = None,
    gateway: Gateway | None = None,
    mock_dir: str | Path | None = None,
) -> Report:
    """Run the pipeline over a dataset and write report artifacts.

    Resumable: question ids already present in predictions.jsonl are loaded,
    not re-run. Per-item failures are recorded as EX=0 with an error note and
    never abort the sweep.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traces_dir = out / "traces"
    traces_dir.mkdir(exist_ok=True)
    predictions_path = out / "predictions.jsonl"

    done: dict[str, ItemOutcome] = {}
    if predictions_path.is_file():
        for line in predictions_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                outcome = ItemOutcome.from_json_line(line)
                done[outcome.question_id] = outcome

    db_root = Path(db_root) if db_root is not None else Path(config.db_root)
    gateway = gateway or pipeline.build_gateway(config, mock_dir=mock_dir)

    artifacts_cache: dict[str, DbArtifacts] = {}
    db_files: dict[str, Path] = {}
    for item in items:
        if item.db_id not in db_files:
            db_files[item.db_id] = resolve_db_file(db_root, item.db_id)
    flagged = validate_gold(items, db_files)

    outcomes: list[ItemOutcome] = []
    stage_prs: dict[str, list[SchemaPR]] = {}
    with open(predictions_path, "a", encoding="utf-8") as pred_fh:
        for item in items:
            if item.question_id in done:
                outcomes.append(done[item.question_id])
                continue
            db_file = db_files[item.db_id]
            if item.db_id not in artifacts_cache:
                artifacts_cache[item.db_id] = pipeline.ensure_artifacts(db_file, config)
            artifacts = artifacts_cache[item.db_id]
            try:
                sql, trace = pipeline.run(
                    item.question,
                    item.evidence,
                    artifacts,
                    config,
                    gateway,
                    qid=item.question_id,
                )
                ex = execution_accuracy(
                    sql,
                    item.gold_sql,
                    db_file,
                    compare_mode=config.compare_mode,
                    timeout=config.execution_timeout_s,
                )
                candidate_ex = _candidate_ex_list(
                    trace, item, db_file, config
                )
                outcome = ItemOutcome(
                    question_id=item.question_id,
                    db_id=item.db_id,
                    difficulty=item.difficulty,
                    predicted_sql=sql,
                    ex=ex,
                    llm_calls=trace.llm_calls,
                    prompt_tokens=trace.prompt_tokens,
                    completion_tokens=trace.completion_tokens,
                    candidate_ex=candidate_ex,
                )
                _collect_stage_pr(stage_prs, trace, item, artifacts.catalog)
                _write_trace_jsonl(traces_dir / f"{item.question_id}.jsonl", trace)
            except Exception as exc:
                logger.warning("item %s failed: %s", item.question_id, exc)
                outcome = ItemOutcome(
                    question_id=item.question_id,
                    db_id=item.db_id,
                    difficulty=item.difficulty,
                    predicted_sql="",
                    ex=0,
                    llm_calls=0,
                    prompt_tokens=0,
                    completion_tokens=0,
                    error=str(exc),
                )
            pred_fh.write(outcome.to_json_line() + "\n")
            outcomes.append(outcome)

    report = _assemble_report(outcomes, stage_prs, flagged, config)
    (out / "report.json").write_text(
        json.dumps(report.to_dict(), indent=1, ensure_ascii=False), encoding="utf-8"
    )
    return report


def _write_trace_jsonl(path: Path, trace: RunTrace) -> None:
    """One summary line followed by one line per completion call."""
    summary = trace.to_dict()
    records = summary.pop("records")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kind": "summary", **summary}, ensure_ascii=False) + "\n")
        for record in records:
            fh.write(json.dumps({"kind": "llm_call", **record}, ensure_ascii=False) + "\n")


def _candidate_ex_list(
    trace: RunTrace, item: BenchmarkItem, db_file: Path, config: PipelineConfig
) -> list[int]:
    out = []
    for cand in trace.candidates:
        out.append(
            execution_accuracy(
                cand["sql"],
                item.gold_sql,
                db_file,
                compare_mode=config.compare_mode,
                timeout=config.execution_timeout_s,
            )
        )
    return out


def _collect_stage_pr(
    stage_prs: dict[str, list[SchemaPR]],
    trace: RunTrace,
    item: BenchmarkItem,
    catalog: SchemaCatalog,
) -> None:
    if len(trace.stages) < 2:
        return
    try:
        gold_tables, gold_columns = extract_gold_schema_items(item.gold_sql, catalog)
    except DatasetError as exc:
        logger.warning("schema PR skipped for %s: %s", item.question_id, exc)
        return
    if not gold_tables or not gold_columns:
        return
    for stage in trace.stages:
        pr = schema_selection_pr(stage.selection, gold_tables, gold_columns)
        stage_prs.setdefault(stage.stage, []).append(pr)


def _assemble_report(
    outcomes: list[ItemOutcome],
    stage_prs: dict[str, list[SchemaPR]],
    flagged: list[str],
    config: PipelineConfig,
) -> Report:
    n = len(outcomes)
    ex_overall = sum(o.ex for o in outcomes) / n if n else 0.0
    ex_by_diff: dict[str, float] = {}
    counts: dict[str, int] = {}
    for diff in DIFFICULTIES:
        rows = [o for o in outcomes if o.difficulty == diff]
        counts[diff] = len(rows)
        if rows:
            ex_by_diff[diff] = sum(o.ex for o in rows) / len(rows)
    pass_at: dict[str, float] = {}
    lists = [o.candidate_ex for o in outcomes if o.candidate_ex]
    if lists and len(lists) == n:
        min_len = min(len(lst) for lst in lists)
        for k in (1, min_len):
            if 1 <= k <= min_len:
                pass_at[f"pass@{k}"] = pass_at_k(lists, k)
    mean_prs = {
        stage: {
            "table_recall": sum(p.table_recall for p in prs) / len(prs),
            "table_precision": sum(p.table_precision for p in prs) / len(prs),
            "column_recall": sum(p.column_recall for p in prs) / len(prs),
            "column_precision": sum(p.column_precision for p in prs) / len(prs),
        }
        for stage, prs in stage_prs.items()
    }
    return Report(
        outcomes=outcomes,
        ex_overall=ex_overall,
        ex_by_difficulty=ex_by_diff,
        counts_by_difficulty=counts,
        pass_at=pass_at,
        mean_llm_calls=sum(o.llm_calls for o in outcomes) / n if n else 0.0,
        mean_prompt_tokens=sum(o.prompt_tokens for o in outcomes) / n if n else 0.0,
        mean_completion_tokens=sum(o.completion_tokens for o in outcomes) / n if n else 0.0,
        schema_pr_per_stage=mean_prs,
        flagged_gold=flagged,
    )
