"""Database structural model: introspection, catalog descriptions, sub-schema
projection with linking-column retention, and schema-to-prompt rendering.

A SchemaCatalog is built once per SQLite file and treated as immutable
afterwards; SubSchema objects are lightweight views onto it. Foreign-key and
primary-key columns ("linking columns") are never dropped by projection
because joins and counts need them even when they are semantically unrelated
to a question.
"""

from __future__ import annotations

import csv
import json
import logging
import re
import sqlite3
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

logger = logging.getLogger(__name__)

_PLAIN_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")


class CatalogError(Exception):
    """Database file could not be read or the catalog is inconsistent."""


class ProjectionError(Exception):
    """A projection request referenced an unknown table or column."""


@dataclass
class ColumnInfo:
    name: str
    declared_type: str = ""
    expanded_name: str | None = None
    column_description: str | None = None
    value_description: str | None = None
    is_pk: bool = False
    fk_targets: list[str] = field(default_factory=list)  # "table.column" strings
    sample_values: list[str] = field(default_factory=list)


@dataclass
class TableInfo:
    name: str
    columns: list[ColumnInfo] = field(default_factory=list)
    primary_key: list[str] = field(default_factory=list)

    def column(self, name: str) -> ColumnInfo:
        for col in self.columns:
            if col.name == name:
                return col
        raise KeyError(name)

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]


@dataclass
class FkEdge:
    """One foreign-key edge, src_table.src_column -> dst_table.dst_column."""

    src_table: str
    src_column: str
    dst_table: str
    dst_column: str

    def as_pair(self) -> tuple[tuple[str, str], tuple[str, str]]:
        return (self.src_table, self.src_column), (self.dst_table, self.dst_column)


@dataclass
class SchemaCatalog:
    db_id: str
    tables: list[TableInfo] = field(default_factory=list)
    fk_edges: list[FkEdge] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.validate()

    # -- lookups ---------------------------------------------------------

    def table(self, name: str) -> TableInfo:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def table_names(self) -> list[str]:
        return [t.name for t in self.tables]

    def has_column(self, table: str, column: str) -> bool:
        try:
            self.table(table).column(column)
        except KeyError:
            return False
        return True

    def column_count(self) -> int:
        return sum(len(t.columns) for t in self.tables)

    def linking_columns(self, table: str) -> set[str]:
        """PK columns of `table` plus any column on either side of an FK edge."""
        t = self.table(table)
        cols = set(t.primary_key)
        for edge in self.fk_edges:
            if edge.src_table == table:
                cols.add(edge.src_column)
            if edge.dst_table == table:
                cols.add(edge.dst_column)
        return cols

    def validate(self) -> None:
        names = [t.name for t in self.tables]
        if len(names) != len(set(names)):
            raise CatalogError(f"duplicate table names in catalog {self.db_id!r}")
        for t in self.tables:
            col_names = t.column_names()
            if len(col_names) != len(set(col_names)):
                raise CatalogError(f"duplicate column names in table {t.name!r}")
            missing_pk = set(t.primary_key) - set(col_names)
            if missing_pk:
                raise CatalogError(f"primary key {missing_pk} not in table {t.name!r}")
            for col in t.columns:
                if col.is_pk != (col.name in t.primary_key):
                    raise CatalogError(
                        f"is_pk flag inconsistent for {t.name}.{col.name}"
                    )
        for edge in self.fk_edges:
            for table, column in edge.as_pair():
                if not self.has_column(table, column):
                    raise CatalogError(
                        f"fk edge endpoint {table}.{column} not in catalog"
                    )

    # -- serialization (cache/export format) ------------------------------

    def to_json_dict(self) -> dict:
        return {
            "db_id": self.db_id,
            "tables": [
                {
                    "name": t.name,
                    "primary_key": list(t.primary_key),
                    "columns": [
                        {
                            "name": c.name,
                            "declared_type": c.declared_type,
                            "expanded_name": c.expanded_name,
                            "column_description": c.column_description,
                            "value_description": c.value_description,
                            "is_pk": c.is_pk,
                            "fk_targets": list(c.fk_targets),
                            "sample_values": list(c.sample_values),
                        }
                        for c in t.columns
                    ],
                }
                for t in self.tables
            ],
            "fk_edges": [
                [e.src_table, e.src_column, e.dst_table, e.dst_column]
                for e in self.fk_edges
            ],
        }

    @classmethod
    def from_json_dict(cls, payload: Mapping) -> "SchemaCatalog":
        tables = [
            TableInfo(
                name=t["name"],
                primary_key=list(t["primary_key"]),
                columns=[
                    ColumnInfo(
                        name=c["name"],
                        declared_type=c.get("declared_type", ""),
                        expanded_name=c.get("expanded_name"),
                        column_description=c.get("column_description"),
                        value_description=c.get("value_description"),
                        is_pk=bool(c.get("is_pk", False)),
                        fk_targets=list(c.get("fk_targets", [])),
                        sample_values=list(c.get("sample_values", [])),
                    )
                    for c in t["columns"]
                ],
            )
            for t in payload["tables"]
        ]
        edges = [FkEdge(*e) for e in payload.get("fk_edges", [])]
        return cls(db_id=payload["db_id"], tables=tables, fk_edges=edges)


def save_catalog(catalog: SchemaCatalog, path: str | Path) -> None:
    Path(path).write_text(json.dumps(catalog.to_json_dict(), indent=1), encoding="utf-8")


def load_catalog(path: str | Path) -> SchemaCatalog:
    return SchemaCatalog.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class SubSchema:
    """An ordered table -> columns selection over a parent catalog.

    Invariant: every selected table carries all of its PK columns, and both
    endpoint columns of any FK edge joining two selected tables are present.
    """

    selection: dict[str, list[str]]
    parent: SchemaCatalog

    def __post_init__(self) -> None:
        for table, cols in self.selection.items():
            for col in cols:
                if not self.parent.has_column(table, col):
                    raise ProjectionError(f"unknown column {table}.{col}")
        selected = set(self.selection)
        for table in selected:
            have = set(self.selection[table])
            missing = set(self.parent.table(table).primary_key) - have
            if missing:
                raise ProjectionError(
                    f"sub-schema for {table!r} is missing primary key columns {sorted(missing)}"
                )
        for edge in self.parent.fk_edges:
            if edge.src_table in selected and edge.dst_table in selected:
                if edge.src_column not in self.selection[edge.src_table]:
                    raise ProjectionError(
                        f"sub-schema missing fk column {edge.src_table}.{edge.src_column}"
                    )
                if edge.dst_column not in self.selection[edge.dst_table]:
                    raise ProjectionError(
                        f"sub-schema missing fk column {edge.dst_table}.{edge.dst_column}"
                    )

    def table_names(self) -> list[str]:
        return list(self.selection)

    def n_tables(self) -> int:
        return len(self.selection)

    def n_columns(self) -> int:
        return sum(len(cols) for cols in self.selection.values())

    def contains(self, table: str, column: str) -> bool:
        return table in self.selection and column in self.selection[table]

    def as_requested(self) -> dict[str, list[str]]:
        return {t: list(cols) for t, cols in self.selection.items()}


def introspect_database(db_file: str | Path) -> SchemaCatalog:
    """Read table/column/PK/FK structure from a SQLite file.

    Raises CatalogError (naming the path) when the file is missing, not a
    database, or otherwise unreadable.
    """
    path = Path(db_file)
    try:
        conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
    except sqlite3.Error as exc:
        raise CatalogError(f"cannot open database {path}: {exc}") from exc
    try:
        try:
            rows = conn.execute(
                "SELECT name FROM sqlite_master"
                " WHERE type = 'table' AND name NOT LIKE 'sqlite_%'"
            ).fetchall()
        except sqlite3.Error as exc:
            raise CatalogError(f"cannot read schema of {path}: {exc}") from exc

        tables: list[TableInfo] = []
        for (table_name,) in rows:
            info = conn.execute(f'PRAGMA table_info("{_tick(table_name)}")').fetchall()
            pk_cols = sorted(
                ((r[5], r[1]) for r in info if r[5] > 0), key=lambda x: x[0]
            )
            primary_key = [name for _, name in pk_cols]
            columns = [
                ColumnInfo(
                    name=r[1],
                    declared_type=(r[2] or ""),
                    is_pk=r[5] > 0,
                )
                for r in info
            ]
            tables.append(TableInfo(table_name, columns, primary_key))

        by_name = {t.name: t for t in tables}
        edges: list[FkEdge] = []
        for t in tables:
            fks = conn.execute(f'PRAGMA foreign_key_list("{_tick(t.name)}")').fetchall()
            for fk in fks:
                dst_table, src_col, dst_col = fk[2], fk[3], fk[4]
                target = by_name.get(dst_table)
                if target is None:
                    continue
                if dst_col is None:
                    # implicit reference: points at the target's primary key
                    if len(target.primary_key) != 1:
                        continue
                    dst_col = target.primary_key[0]
                if src_col not in t.column_names() or dst_col not in target.column_names():
                    continue
                edges.append(FkEdge(t.name, src_col, dst_table, dst_col))
                t.column(src_col).fk_targets.append(f"{dst_table}.{dst_col}")
    finally:
        conn.close()
    return SchemaCatalog(db_id=path.stem, tables=tables, fk_edges=edges)


def ingest_catalog_descriptions(
    catalog: SchemaCatalog, description_dir: str | Path
) -> SchemaCatalog:
    """Attach expanded names and descriptions from per-table CSV files.

    Expects one `<table>.csv` per table with columns (original_column_name,
    column_name, column_description, data_format, value_description).
    Identifier matching is case-insensitive with whitespace stripped. Rows
    that do not match a column are logged and skipped; a missing directory
    leaves the catalog unchanged.
    """
    directory = Path(description_dir)
    if not directory.is_dir():
        logger.warning("description directory %s not found; catalog unchanged", directory)
        return catalog

    catalog = SchemaCatalog.from_json_dict(catalog.to_json_dict())
    tables_ci = {t.name.strip().lower(): t for t in catalog.tables}
    for csv_path in sorted(directory.glob("*.csv")):
        table = tables_ci.get(csv_path.stem.strip().lower())
        if table is None:
            logger.warning("description file %s matches no table", csv_path.name)
            continue
        columns_ci = {c.name.strip().lower(): c for c in table.columns}
        try:
            text = csv_path.read_text(encoding="utf-8-sig", errors="replace")
        except OSError as exc:
            logger.warning("cannot read %s: %s", csv_path, exc)
            continue
        reader = csv.DictReader(text.splitlines())
        for row in reader:
            if not row:
                continue
            original = (row.get("original_column_name") or "").strip()
            if not original:
                logger.warning("malformed description row in %s: %r", csv_path.name, row)
                continue
            col = columns_ci.get(original.lower())
            if col is None:
                logger.warning(
                    "description for unknown column %s.%s skipped", table.name, original
                )
                continue
            expanded = (row.get("column_name") or "").strip()
            col_desc = (row.get("column_description") or "").strip()
            val_desc = (row.get("value_description") or "").strip()
            if expanded and expanded.lower() != col.name.lower():
                col.expanded_name = expanded
            if col_desc:
                col.column_description = col_desc
            if val_desc:
                col.value_description = val_desc
    return catalog


def project(
    catalog: SchemaCatalog, requested: Mapping[str, Sequence[str]]
) -> SubSchema:
    """Project a table -> columns request onto the catalog.

    The result always contains, beyond what was requested, the PK columns of
    every requested table and both sides of any FK edge whose endpoint tables
    are both requested. Unknown names raise ProjectionError.
    """
    wanted: dict[str, set[str]] = {}
    for table, cols in requested.items():
        try:
            tinfo = catalog.table(table)
        except KeyError:
            raise ProjectionError(f"unknown table {table!r}") from None
        known = set(tinfo.column_names())
        for col in cols:
            if col not in known:
                raise ProjectionError(f"unknown column {table}.{col}")
        wanted[table] = set(cols)

    for table in wanted:
        wanted[table].update(catalog.table(table).primary_key)
    for edge in catalog.fk_edges:
        if edge.src_table in wanted and edge.dst_table in wanted:
            wanted[edge.src_table].add(edge.src_column)
            wanted[edge.dst_table].add(edge.dst_column)

    selection: dict[str, list[str]] = {}
    for tinfo in catalog.tables:
        if tinfo.name in wanted:
            chosen = wanted[tinfo.name]
            selection[tinfo.name] = [c for c in tinfo.column_names() if c in chosen]
    return SubSchema(selection=selection, parent=catalog)


def full_projection(catalog: SchemaCatalog) -> SubSchema:
    return project(catalog, {t.name: t.column_names() for t in catalog.tables})


def render_schema_prompt(
    sub: SubSchema,
    entities: Sequence = (),
    descriptions: Sequence = (),
) -> str:
    """Render a sub-schema as CREATE TABLE blocks for prompting.

    Matched database values are appended to their column line as
    `-- examples: v1, v2`, retrieved catalog text as `-- description: ...`.
    Annotations referencing columns outside the sub-schema are dropped.
    Output is a pure function of the arguments: same inputs, same bytes.
    """
    examples: dict[tuple[str, str], list[str]] = {}
    for ent in entities:
        key = (ent.table, ent.column)
        if not sub.contains(*key):
            continue
        examples.setdefault(key, []).append(ent.value)
    best_desc: dict[tuple[str, str], object] = {}
    for hit in descriptions:
        key = (hit.table, hit.column)
        if not sub.contains(*key):
            continue
        prev = best_desc.get(key)
        if prev is None or (-hit.cosine, hit.doc_id) < (-prev.cosine, prev.doc_id):
            best_desc[key] = hit

    blocks: list[str] = []
    catalog = sub.parent
    for tinfo in catalog.tables:
        if tinfo.name not in sub.selection:
            continue
        chosen = set(sub.selection[tinfo.name])
        entries: list[tuple[str, str | None]] = []  # (entry text, column name)
        for col in tinfo.columns:
            if col.name not in chosen:
                continue
            parts = [f"{quote_identifier(col.name)} {col.declared_type}".rstrip()]
            if col.is_pk and len(tinfo.primary_key) == 1:
                parts.append("PRIMARY KEY")
            entries.append((" ".join(parts), col.name))
        if len(tinfo.primary_key) > 1:
            pk = ", ".join(quote_identifier(c) for c in tinfo.primary_key)
            entries.append((f"PRIMARY KEY ({pk})", None))
        for edge in catalog.fk_edges:
            if edge.src_table != tinfo.name or edge.dst_table not in sub.selection:
                continue
            entries.append(
                (
                    f"FOREIGN KEY ({quote_identifier(edge.src_column)}) REFERENCES "
                    f"{quote_identifier(edge.dst_table)} ({quote_identifier(edge.dst_column)})",
                    None,
                )
            )

        lines = [f"CREATE TABLE {quote_identifier(tinfo.name)}", "("]
        for i, (entry, col_name) in enumerate(entries):
            comma = "," if i < len(entries) - 1 else ""
            annotation = ""
            if col_name is not None:
                key = (tinfo.name, col_name)
                if key in examples:
                    vals = sorted(set(examples[key]))
                    annotation += " -- examples: " + ", ".join(vals)
                if key in best_desc:
                    text = " ".join(best_desc[key].text.split())
                    annotation += f" -- description: {text}"
            lines.append(f"    {entry}{comma}{annotation}")
        lines.append(");")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def quote_identifier(name: str) -> str:
    """Backquote identifiers that are not plain words (spaces, parens, ...)."""
    if _PLAIN_IDENT.match(name):
        return name
    return f"`{name}`"


def _tick(name: str) -> str:
    return name.replace('"', '""')
