"""Agent-facing tools: SchemaViewer, EntityLookup, GraphSQL, Search and
PropertySearch. Every tool is read-only and returns a rendered text block;
failures are returned in-band so the agent loop can recover.
"""
from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from . import index as index_mod
from .errors import EmbedderFailure
from .index import VectorIndex, hybrid_search
from .ontology import temporal_sort_key
from .sqlguard import WHITELISTED_TABLES, validate_sql
from .store import Store

ROW_CAP = 200
CHAR_CAP = 20_000

TOOL_NAMES = ("schema_viewer", "entity_lookup", "graph_sql", "search", "property_search")

# wire contract for external policy providers
TOOL_ARG_SCHEMAS: Dict[str, dict] = {
    "schema_viewer": {
        "type": "object",
        "properties": {
            "include_examples": {"type": "boolean"},
            "include_guide": {"type": "boolean"},
        },
        "additionalProperties": False,
    },
    "entity_lookup": {
        "type": "object",
        "properties": {
            "query": {"type": "string"},
            "k": {"type": "integer", "minimum": 1},
        },
        "required": ["query"],
        "additionalProperties": False,
    },
    "graph_sql": {
        "type": "object",
        "properties": {
            "sql": {"type": "string"},
            "params": {"type": "object"},
        },
        "required": ["sql"],
        "additionalProperties": False,
    },
    "search": {
        "type": "object",
        "properties": {
            "query": {"type": "string"},
            "k": {"type": "integer", "minimum": 1},
        },
        "required": ["query"],
        "additionalProperties": False,
    },
    "property_search": {
        "type": "object",
        "properties": {
            "query": {"type": "string"},
            "k": {"type": "integer", "minimum": 1},
        },
        "required": ["query"],
        "additionalProperties": False,
    },
}


@dataclass(frozen=True)
class ToolResult:
    ok: bool
    text: str = ""
    error: Optional[str] = None


@dataclass(frozen=True)
class ToolCall:
    tool: str
    args: dict


def render_markdown_table(headers: List[str], rows: List[List[Any]]) -> str:
    def cell(value: Any) -> str:
        if isinstance(value, str):
            return value.replace("|", "\\|").replace("\n", " ")
        return json.dumps(value)

    lines = [
        "| " + " | ".join(headers) + " |",
        "| " + " | ".join("---" for _ in headers) + " |",
    ]
    for row in rows:
        lines.append("| " + " | ".join(cell(value) for value in row) + " |")
    return "\n".join(lines)


_SCHEMA_COLUMNS = {
    "entities": "entity_id, entity_name, entity_type, role, aliases_json, external_id, created_at",
    "properties": "property_id, property_name, dtype, description, created_at",
    "facts": "id, subject_id, property_name, value_json, dtype, valid_from, valid_to, confidence, created_at",
    "events": "id, event_type, anchor_datetime, location, created_at",
    "evidence": "id, fact_id, event_id, turn_id, span_start, span_end, quoted_text",
    "event_participants": "event_id, entity_id, role",
    "turns": "id, session_id, ordinal, speaker, listener, text, anchor_datetime",
}

_EXAMPLE_QUERIES = {
    "SELECT": (
        "SELECT DISTINCT entity_id, entity_name, entity_type FROM entities "
        "WHERE entity_name LIKE '%Anthony%' COLLATE NOCASE"
    ),
    "JOIN": (
        "SELECT f.property_name, f.value_json, f.dtype FROM facts f "
        "JOIN evidence e ON e.fact_id = f.id WHERE e.event_id = 518"
    ),
    "AGGREGATE": (
        "SELECT COUNT(DISTINCT device_name) as device_count FROM ( "
        "SELECT 'Fitbit Versa 3' as device_name "
        "UNION SELECT 'nebulizer machine' as device_name "
        "UNION SELECT 'Accu-Chek Aviva Nano' as device_name "
        "UNION SELECT 'hearing aids' as device_name )"
    ),
    "TEMPORAL": (
        "SELECT f.value_json as start_date, date(:question_date) as question_date, "
        "julianday(:question_date) - julianday(json_extract(f.value_json, '$')) "
        "as days_difference, "
        "CAST((julianday(:question_date) - julianday(json_extract(f.value_json, '$')))"
        "/ 30.44 AS INTEGER) as months_approx, "
        "CAST((julianday(:question_date) - julianday(json_extract(f.value_json, '$')))"
        "/7 AS INTEGER) as weeks_approx "
        "FROM facts f WHERE f.subject_id = :user_id "
        "AND f.property_name = :property_id ORDER BY f.created_at DESC LIMIT 1"
    ),
}

_USAGE_GUIDE = """\
Usage guide
-----------
- entity_lookup: call first to canonicalize a person/place/thing name to an
  entity id and see its most recent property values at a glance.
- search: broad hybrid retrieval; use for open-ended questions, or when you
  do not know which entity, event, or property holds the answer.
- property_search: find the canonical snake_case property name before
  filtering facts by property_name in SQL.
- graph_sql: precise reasoning - joins across entities/facts/events,
  aggregation (COUNT/SUM/AVG), and temporal arithmetic. Only single
  read-only SELECT (or WITH ... SELECT) statements over the whitelisted
  tables are accepted. Named parameters (:question_date etc.) are bound
  from the arguments.
- Temporal SQL: anchor_datetime and valid_from/valid_to are ISO-8601 text;
  compare them lexicographically, or use julianday(:question_date) -
  julianday(json_extract(f.value_json, '$')) for day arithmetic. To get the
  current value of a property, ORDER BY valid_from DESC, created_at DESC
  LIMIT 1. Superseded facts remain in the table: filter by valid_from <=
  the question date to reconstruct past states.
"""


def schema_viewer(include_examples: bool = False, include_guide: bool = False) -> ToolResult:
    sections = ["Tables", "------"]
    for table in WHITELISTED_TABLES:
        sections.append(f"- {table}({_SCHEMA_COLUMNS[table]})")
    sections.append(
        "\nEvery table also has a lexical search view used by the search tool."
    )
    if include_examples:
        sections.append("\nExample queries\n---------------")
        for category, query in _EXAMPLE_QUERIES.items():
            sections.append(f"[{category}]\n{query}\n")
    if include_guide:
        sections.append("\n" + _USAGE_GUIDE)
    return ToolResult(ok=True, text="\n".join(sections))


@dataclass(frozen=True)
class EntityDocument:
    id: int
    name: str
    type: str
    latest: str
    anchors: tuple
    last_anchor: Optional[str]
    facts: str


def build_entity_document(store: Store, entity_id: int) -> Optional[EntityDocument]:
    row = store.entity_row(entity_id)
    if row is None:
        return None
    properties = store.subject_properties(entity_id)
    latest_rows = []
    history_rows = []
    for prop in properties:
        latest = store.latest_fact(entity_id, prop)
        if latest is not None:
            latest_rows.append(
                [prop, json.dumps(_jsonable(latest.value)), latest.valid_from or ""]
            )
        for fact in store.fact_history(entity_id, prop):
            history_rows.append(
                [
                    prop,
                    json.dumps(_jsonable(fact.value)),
                    fact.valid_from or "",
                    fact.valid_to or "",
                    fact.created_at or "",
                ]
            )
    anchors = tuple(
        r[0]
        for r in store._conn.execute(
            "SELECT DISTINCT e.anchor_datetime FROM events e"
            " JOIN event_participants p ON p.event_id = e.id"
            " WHERE p.entity_id = ? ORDER BY e.anchor_datetime",
            (entity_id,),
        ).fetchall()
    )
    last_anchor = max(anchors, key=temporal_sort_key) if anchors else None
    return EntityDocument(
        id=entity_id,
        name=row["entity_name"],
        type=row["entity_type"],
        latest=render_markdown_table(["property", "value", "valid_from"], latest_rows),
        anchors=anchors,
        last_anchor=last_anchor,
        facts=render_markdown_table(
            ["property", "value", "valid_from", "valid_to", "created_at"],
            history_rows,
        ),
    )


def _jsonable(value: Any) -> Any:
    import datetime as _dt

    if isinstance(value, (_dt.date, _dt.datetime)):
        return value.isoformat()
    return value


def render_entity_document(doc: EntityDocument) -> str:
    lines = [
        f"### {doc.name} ({doc.type}) — {Store.entity_alias(doc.id)}",
        f"last_anchor: {doc.last_anchor or 'n/a'}",
        f"anchors: {', '.join(doc.anchors) or 'n/a'}",
        "",
        "Latest property values:",
        doc.latest,
        "",
        "Full fact history:",
        doc.facts,
    ]
    return "\n".join(lines)


def entity_lookup(store: Store, index: VectorIndex, query: str, k: int = 5) -> ToolResult:
    if k < 1:
        return ToolResult(ok=False, error="k must be >= 1")
    try:
        hits = hybrid_search(store, index, ["entity"], query, k)
    except EmbedderFailure as exc:
        raise
    documents = []
    for doc_id, _kind, _score in hits:
        doc = build_entity_document(store, doc_id)
        if doc is not None:
            documents.append(render_entity_document(doc))
    if not documents:
        return ToolResult(ok=True, text="No matching entities.")
    return ToolResult(ok=True, text=_cap_text("\n\n".join(documents)))


def _cap_text(text: str) -> str:
    if len(text) <= CHAR_CAP:
        return text
    return text[:CHAR_CAP] + f"\n... truncated at {CHAR_CAP} characters"


class GraphSql:
    """Executor binding a store to the validated read-only SQL surface."""

    def __init__(self, store: Store):
        self.store = store
        self.accessed_tables: set = set()

    def _authorizer(self, action, arg1, arg2, dbname, source):
        if action == sqlite3.SQLITE_SELECT:
            return sqlite3.SQLITE_OK
        if action == sqlite3.SQLITE_READ:
            if arg1 is None or arg1 == "":
                return sqlite3.SQLITE_OK
            if arg1 in WHITELISTED_TABLES or arg1.startswith("sqlite_temp"):
                self.accessed_tables.add(arg1)
                return sqlite3.SQLITE_OK
            return sqlite3.SQLITE_DENY
        if action == sqlite3.SQLITE_FUNCTION:
            return sqlite3.SQLITE_OK
        if action == sqlite3.SQLITE_RECURSIVE:
            return sqlite3.SQLITE_OK
        return sqlite3.SQLITE_DENY

    def execute(self, statement: str, params: Optional[dict] = None) -> ToolResult:
        report = validate_sql(statement)
        if not report.accepted:
            return ToolResult(ok=False, error=f"SqlRejected: {report.reason}")

        conn = self.store.readonly_connection()
        owns_conn = conn is not self.store._conn
        try:
            conn.set_authorizer(self._authorizer)
            bound = {
                name: params.get(name) if params else None
                for name in report.params
            }
            if params:
                missing = report.params - set(params)
            else:
                missing = set(report.params)
            if missing:
                return ToolResult(
                    ok=False,
                    error=(
                        "SqlRuntimeError: missing named parameter(s): "
                        + ", ".join(sorted(missing))
                    ),
                )
            try:
                cursor = conn.execute(statement, bound)
                headers = [d[0] for d in cursor.description or []]
                rows = cursor.fetchmany(ROW_CAP + 1)
            except sqlite3.Error as exc:
                return ToolResult(ok=False, error=f"SqlRuntimeError: {exc}")
            truncated = len(rows) > ROW_CAP
            rows = rows[:ROW_CAP]
            table = render_markdown_table(headers, [list(row) for row in rows])
            if truncated:
                table += f"\n... truncated: showing first {ROW_CAP} rows"
            return ToolResult(ok=True, text=_cap_text(table))
        finally:
            # passing None does not reliably clear the authorizer on older
            # sqlite3 bindings; install an allow-all callback instead
            conn.set_authorizer(lambda *args: sqlite3.SQLITE_OK)
            if owns_conn:
                conn.close()


def graph_sql(store: Store, statement: str, params: Optional[dict] = None) -> ToolResult:
    return GraphSql(store).execute(statement, params)


def search(store: Store, index: VectorIndex, query: str, k: int = 5) -> ToolResult:
    """Four ranked sections: entities, properties, events/evidence, turns."""
    if k < 1:
        return ToolResult(ok=False, error="k must be >= 1")
    sections = []

    entity_hits = hybrid_search(store, index, ["entity"], query, k)
    rows = []
    for doc_id, _kind, score in entity_hits:
        info = store.entity_row(doc_id)
        rows.append(
            [Store.entity_alias(doc_id), info["entity_name"], info["entity_type"],
             f"{score.fused:.4f}"]
        )
    sections.append(
        "Entities:\n" + render_markdown_table(["id", "name", "type", "score"], rows)
    )

    property_hits = hybrid_search(store, index, ["property"], query, k)
    rows = []
    for doc_id, _kind, score in property_hits:
        name, dtype = store._conn.execute(
            "SELECT property_name, dtype FROM properties WHERE property_id = ?",
            (doc_id,),
        ).fetchone()
        rows.append([name, dtype, f"{score.fused:.4f}"])
    sections.append(
        "Properties:\n"
        + render_markdown_table(["property_name", "dtype", "score"], rows)
    )

    ev_hits = hybrid_search(store, index, ["event", "evidence"], query, k)
    rows = []
    for doc_id, kind, score in ev_hits:
        if kind == "event":
            record = store._conn.execute(
                "SELECT event_type, anchor_datetime FROM events WHERE id = ?",
                (doc_id,),
            ).fetchone()
            rows.append([kind, doc_id, f"{record[0]} @ {record[1]}", f"{score.fused:.4f}"])
        else:
            record = store._conn.execute(
                "SELECT quoted_text FROM evidence WHERE id = ?", (doc_id,)
            ).fetchone()
            rows.append([kind, doc_id, record[0], f"{score.fused:.4f}"])
    sections.append(
        "Events and evidence:\n"
        + render_markdown_table(["kind", "id", "summary", "score"], rows)
    )

    turn_hits = hybrid_search(store, index, ["turn"], query, k)
    rows = []
    for doc_id, _kind, score in turn_hits:
        record = store._conn.execute(
            "SELECT speaker, text, anchor_datetime FROM turns WHERE id = ?",
            (doc_id,),
        ).fetchone()
        rows.append([doc_id, record[0], record[1], record[2], f"{score.fused:.4f}"])
    sections.append(
        "Turns:\n"
        + render_markdown_table(
            ["id", "speaker", "text", "anchor_datetime", "score"], rows
        )
    )

    return ToolResult(ok=True, text=_cap_text("\n\n".join(sections)))


def property_search(store: Store, index: VectorIndex, query: str, k: int = 5) -> ToolResult:
    if k < 1:
        return ToolResult(ok=False, error="k must be >= 1")
    hits = hybrid_search(store, index, ["property"], query, k)
    rows = []
    for doc_id, _kind, score in hits:
        name, dtype = store._conn.execute(
            "SELECT property_name, dtype FROM properties WHERE property_id = ?",
            (doc_id,),
        ).fetchone()
        usage = store._conn.execute(
            "SELECT COUNT(*) FROM facts WHERE property_name = ?", (name,)
        ).fetchone()[0]
        rows.append([name, dtype, usage, f"{score.fused:.4f}"])
    return ToolResult(
        ok=True,
        text=render_markdown_table(
            ["property_name", "dtype", "usage_count", "score"], rows
        ),
    )


class ToolKit:
    """Validates and dispatches tool calls against one store snapshot."""

    def __init__(self, store: Store, index: VectorIndex):
        self.store = store
        self.index = index

    def dispatch(self, call: ToolCall, default_params: Optional[dict] = None) -> ToolResult:
        if call.tool not in TOOL_NAMES:
            return ToolResult(ok=False, error=f"unknown tool: {call.tool!r}")
        error = _validate_args(call)
        if error:
            return ToolResult(ok=False, error=error)
        args = call.args
        if call.tool == "schema_viewer":
            return schema_viewer(
                bool(args.get("include_examples", False)),
                bool(args.get("include_guide", False)),
            )
        if call.tool == "entity_lookup":
            return entity_lookup(
                self.store, self.index, args["query"], int(args.get("k", 5))
            )
        if call.tool == "graph_sql":
            params = dict(default_params or {})
            params.update(args.get("params") or {})
            return graph_sql(self.store, args["sql"], params)
        if call.tool == "search":
            return search(self.store, self.index, args["query"], int(args.get("k", 5)))
        return property_search(
            self.store, self.index, args["query"], int(args.get("k", 5))
        )


def _validate_args(call: ToolCall) -> Optional[str]:
    import jsonschema

    try:
        jsonschema.validate(call.args, TOOL_ARG_SCHEMAS[call.tool])
    except jsonschema.ValidationError as exc:
        return f"invalid arguments for {call.tool}: {exc.message}"
    return None
