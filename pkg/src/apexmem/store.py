"""Append-only embedded relational store over SQLite.

Committed rows are never updated or deleted through the public interface;
revisions are new fact rows and conflicts are resolved at query time.
Every commit is recorded in an append log from which the store can be
replayed row-for-row.
"""
from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass
from typing import Any, Iterable, Optional

from . import ontology
from .errors import (
    DanglingReference,
    IoFailure,
    SchemaMismatch,
    ValidationFailure,
)
from .ontology import (
    DType,
    Entity,
    Event,
    Evidence,
    Fact,
    Role,
    Turn,
    temporal_sort_key,
)

SCHEMA_VERSION = "1"

WHITELISTED_TABLES = (
    "entities",
    "properties",
    "facts",
    "events",
    "evidence",
    "event_participants",
    "turns",
)

LEXICAL_VIEWS = ("entities", "facts", "events", "evidence", "turns")

_DDL = """
CREATE TABLE meta (key TEXT PRIMARY KEY, value TEXT NOT NULL);
CREATE TABLE append_log (
    sequence INTEGER PRIMARY KEY,
    payload TEXT NOT NULL
);
CREATE TABLE entities (
    entity_id INTEGER PRIMARY KEY,
    entity_name TEXT NOT NULL,
    entity_type TEXT NOT NULL,
    role TEXT NOT NULL,
    aliases_json TEXT NOT NULL,
    external_id TEXT,
    created_at TEXT NOT NULL
);
CREATE TABLE properties (
    property_id INTEGER PRIMARY KEY,
    property_name TEXT NOT NULL UNIQUE,
    dtype TEXT NOT NULL,
    description TEXT,
    created_at TEXT NOT NULL
);
CREATE TABLE facts (
    id INTEGER PRIMARY KEY,
    subject_id INTEGER NOT NULL,
    property_name TEXT NOT NULL,
    value_json TEXT NOT NULL,
    dtype TEXT NOT NULL,
    valid_from TEXT,
    valid_to TEXT,
    confidence REAL NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE events (
    id INTEGER PRIMARY KEY,
    event_type TEXT NOT NULL,
    anchor_datetime TEXT NOT NULL,
    location TEXT,
    created_at TEXT NOT NULL
);
CREATE TABLE evidence (
    id INTEGER PRIMARY KEY,
    fact_id INTEGER,
    event_id INTEGER NOT NULL,
    turn_id INTEGER NOT NULL,
    span_start INTEGER NOT NULL,
    span_end INTEGER NOT NULL,
    quoted_text TEXT NOT NULL
);
CREATE TABLE event_participants (
    event_id INTEGER NOT NULL,
    entity_id INTEGER NOT NULL,
    role TEXT NOT NULL
);
CREATE TABLE turns (
    id INTEGER PRIMARY KEY,
    session_id TEXT NOT NULL,
    ordinal INTEGER NOT NULL,
    speaker TEXT NOT NULL,
    listener TEXT NOT NULL,
    text TEXT NOT NULL,
    anchor_datetime TEXT NOT NULL,
    UNIQUE (session_id, ordinal)
);
CREATE TABLE lex_entities (doc_id INTEGER PRIMARY KEY, text TEXT NOT NULL);
CREATE TABLE lex_facts (doc_id INTEGER PRIMARY KEY, text TEXT NOT NULL);
CREATE TABLE lex_events (doc_id INTEGER PRIMARY KEY, text TEXT NOT NULL);
CREATE TABLE lex_evidence (doc_id INTEGER PRIMARY KEY, text TEXT NOT NULL);
CREATE TABLE lex_turns (doc_id INTEGER PRIMARY KEY, text TEXT NOT NULL);
"""

_EPOCH = "1970-01-01T00:00:00Z"


def _value_text(value_json: str) -> str:
    """Flatten a JSON value into searchable text."""
    value = json.loads(value_json)
    if isinstance(value, list):
        return " ".join(str(item) for item in value)
    return str(value)


@dataclass
class CommittedBundle:
    event_id: int
    fact_ids: list
    evidence_ids: list


class Store:
    """Handle to one store file. Single writer, multiple readers."""

    def __init__(self, conn: sqlite3.Connection, path: str):
        self._conn = conn
        self.path = path

    # -- lifecycle -----------------------------------------------------

    @classmethod
    def open(cls, path: str, create_if_missing: bool = True) -> "Store":
        import os

        exists = path == ":memory:" or os.path.exists(path)
        if not exists and not create_if_missing:
            raise IoFailure(f"store does not exist: {path}")
        try:
            conn = sqlite3.connect(path)
        except sqlite3.Error as exc:
            raise IoFailure(str(exc)) from exc
        conn.execute("PRAGMA foreign_keys = ON")
        store = cls(conn, path)
        if exists and store._has_schema():
            version = store._meta("schema_version")
            if version != SCHEMA_VERSION:
                conn.close()
                raise SchemaMismatch(
                    f"store schema version {version!r}, expected {SCHEMA_VERSION!r}"
                )
        else:
            store._create_schema()
        return store

    def close(self) -> None:
        self._conn.close()

    def _has_schema(self) -> bool:
        row = self._conn.execute(
            "SELECT name FROM sqlite_master WHERE type='table' AND name='meta'"
        ).fetchone()
        return row is not None

    def _create_schema(self) -> None:
        with self._conn:
            self._conn.executescript(_DDL)
            self._conn.execute(
                "INSERT INTO meta (key, value) VALUES ('schema_version', ?)",
                (SCHEMA_VERSION,),
            )

    def schema_version(self) -> str:
        return self._meta("schema_version")

    def _meta(self, key: str) -> Optional[str]:
        row = self._conn.execute(
            "SELECT value FROM meta WHERE key = ?", (key,)
        ).fetchone()
        return row[0] if row else None

    # -- id allocation -------------------------------------------------

    def _next_id(self, table: str, column: str) -> int:
        row = self._conn.execute(f"SELECT MAX({column}) FROM {table}").fetchone()
        return (row[0] or 0) + 1

    def peek_next_entity_id(self) -> int:
        return self._next_id("entities", "entity_id")

    @staticmethod
    def entity_alias(entity_id: int) -> str:
        return f"ent:{entity_id}"

    @property
    def sequence(self) -> int:
        row = self._conn.execute("SELECT MAX(sequence) FROM append_log").fetchone()
        return row[0] or 0

    # -- commits -------------------------------------------------------

    def _commit(self, payload: dict) -> None:
        """Apply one logged batch of row inserts atomically."""
        try:
            self._apply(payload)
            self._conn.execute(
                "INSERT INTO append_log (sequence, payload) VALUES (?, ?)",
                (self.sequence + 1, json.dumps(payload, sort_keys=True)),
            )
            self._conn.commit()
        except Exception:
            self._conn.rollback()
            raise

    def _apply(self, payload: dict) -> None:
        for table, rows in payload["rows"].items():
            for row in rows:
                columns = sorted(row)
                placeholders = ", ".join("?" for _ in columns)
                self._conn.execute(
                    f"INSERT INTO {table} ({', '.join(columns)}) "
                    f"VALUES ({placeholders})",
                    [row[c] for c in columns],
                )

    def append_entity(
        self,
        name: str,
        etype: ontology.EntityType,
        role: Role = Role.Mentioned,
        aliases: Iterable[str] = (),
        external_id: Optional[str] = None,
        created_at: str = _EPOCH,
    ) -> int:
        if isinstance(etype, str):
            etype = ontology.validate_entity_type(etype)
        entity = Entity(None, name, etype, role, frozenset(aliases), external_id)
        entity_id = self.peek_next_entity_id()
        payload = {
            "op": "entity",
            "rows": {
                "entities": [
                    {
                        "entity_id": entity_id,
                        "entity_name": entity.name,
                        "entity_type": etype.value,
                        "role": role.value,
                        "aliases_json": json.dumps(sorted(entity.aliases)),
                        "external_id": external_id,
                        "created_at": created_at,
                    }
                ],
                "lex_entities": [
                    {
                        "doc_id": entity_id,
                        "text": " ".join([entity.name, *sorted(entity.aliases)]),
                    }
                ],
            },
        }
        self._commit(payload)
        return entity_id

    def append_property(
        self,
        property_name: str,
        dtype: DType,
        description: str = "",
        created_at: str = _EPOCH,
    ) -> int:
        ontology.validate_property_name(property_name)
        existing = self._conn.execute(
            "SELECT property_id FROM properties WHERE property_name = ?",
            (property_name,),
        ).fetchone()
        if existing:
            return existing[0]
        property_id = self._next_id("properties", "property_id")
        payload = {
            "op": "property",
            "rows": {
                "properties": [
                    {
                        "property_id": property_id,
                        "property_name": property_name,
                        "dtype": dtype.value,
                        "description": description,
                        "created_at": created_at,
                    }
                ]
            },
        }
        self._commit(payload)
        return property_id

    def append_turns(self, turns: Iterable[Turn]) -> list:
        turns = list(turns)
        next_id = self._next_id("turns", "id")
        rows, lex_rows, ids = [], [], []
        for offset, turn in enumerate(turns):
            turn_id = next_id + offset
            existing = self._conn.execute(
                "SELECT 1 FROM turns WHERE session_id = ? AND ordinal = ?",
                (turn.session_id, turn.ordinal),
            ).fetchone()
            if existing:
                raise ValidationFailure(
                    f"duplicate turn ({turn.session_id}, {turn.ordinal})"
                )
            rows.append(
                {
                    "id": turn_id,
                    "session_id": turn.session_id,
                    "ordinal": turn.ordinal,
                    "speaker": turn.speaker,
                    "listener": turn.listener,
                    "text": turn.text,
                    "anchor_datetime": turn.anchor_datetime,
                }
            )
            lex_rows.append({"doc_id": turn_id, "text": turn.text})
            ids.append(turn_id)
        if not rows:
            return []
        self._commit({"op": "turns", "rows": {"turns": rows, "lex_turns": lex_rows}})
        return ids

    def append_event_bundle(
        self,
        event: Event,
        facts: Iterable[Fact] = (),
        evidence: Iterable[Evidence] = (),
        participants: Iterable[tuple] = (),
        created_at: Optional[str] = None,
    ) -> CommittedBundle:
        """Commit one event with its facts, evidence, and participants atomically."""
        facts = list(facts)
        evidence = list(evidence)
        participants = list(participants)
        created_at = created_at or event.anchor_datetime

        for entity_id, _role in participants:
            if not self._entity_exists(entity_id):
                raise DanglingReference(f"unknown entity id {entity_id}")
        for fact in facts:
            if not self._entity_exists(fact.subject_id):
                raise DanglingReference(f"unknown subject id {fact.subject_id}")

        event_id = self._next_id("events", "id")
        fact_ids = list(
            range(self._next_id("facts", "id"), self._next_id("facts", "id") + len(facts))
        )
        evidence_base = self._next_id("evidence", "id")

        rows: dict = {
            "events": [
                {
                    "id": event_id,
                    "event_type": event.event_type,
                    "anchor_datetime": event.anchor_datetime,
                    "location": event.location,
                    "created_at": created_at,
                }
            ],
            "lex_events": [
                {
                    "doc_id": event_id,
                    "text": " ".join(
                        part for part in (event.event_type, event.location) if part
                    ),
                }
            ],
            "facts": [],
            "lex_facts": [],
            "evidence": [],
            "lex_evidence": [],
            "event_participants": [
                {"event_id": event_id, "entity_id": entity_id, "role": role.value}
                for entity_id, role in participants
            ],
        }

        for fact, fact_id in zip(facts, fact_ids):
            value_json = json.dumps(
                ontology.serialize_value(fact.value, fact.dtype), sort_keys=True
            )
            rows["facts"].append(
                {
                    "id": fact_id,
                    "subject_id": fact.subject_id,
                    "property_name": fact.property_name,
                    "value_json": value_json,
                    "dtype": fact.dtype.value,
                    "valid_from": fact.valid_from,
                    "valid_to": fact.valid_to,
                    "confidence": fact.confidence,
                    "created_at": fact.created_at or created_at,
                }
            )
            rows["lex_facts"].append(
                {
                    "doc_id": fact_id,
                    "text": f"{fact.property_name} {_value_text(value_json)}",
                }
            )

        evidence_ids = []
        for offset, item in enumerate(evidence):
            evidence_id = evidence_base + offset
            turn_text = self._turn_text(item.turn_id)
            if turn_text is None:
                raise DanglingReference(f"unknown turn id {item.turn_id}")
            start, end = item.text_span
            if not (0 <= start < end <= len(turn_text)):
                raise ValidationFailure(
                    f"evidence span {item.text_span} outside turn text"
                )
            if turn_text[start:end] != item.quoted_text:
                raise ValidationFailure(
                    "quoted_text does not match the turn text at its span"
                )
            fact_ref = None
            if item.fact_id is not None:
                # fact_id is an index into this bundle's facts when committing
                # together, or an existing fact id otherwise.
                if 0 <= item.fact_id < len(facts):
                    fact_ref = fact_ids[item.fact_id]
                elif self._fact_exists(item.fact_id):
                    fact_ref = item.fact_id
                else:
                    raise DanglingReference(f"unknown fact id {item.fact_id}")
            rows["evidence"].append(
                {
                    "id": evidence_id,
                    "fact_id": fact_ref,
                    "event_id": event_id,
                    "turn_id": item.turn_id,
                    "span_start": start,
                    "span_end": end,
                    "quoted_text": item.quoted_text,
                }
            )
            rows["lex_evidence"].append(
                {"doc_id": evidence_id, "text": item.quoted_text}
            )
            evidence_ids.append(evidence_id)

        self._commit({"op": "event_bundle", "rows": rows})
        return CommittedBundle(event_id, fact_ids, evidence_ids)

    def _entity_exists(self, entity_id: int) -> bool:
        return (
            self._conn.execute(
                "SELECT 1 FROM entities WHERE entity_id = ?", (entity_id,)
            ).fetchone()
            is not None
        )

    def _fact_exists(self, fact_id: int) -> bool:
        return (
            self._conn.execute(
                "SELECT 1 FROM facts WHERE id = ?", (fact_id,)
            ).fetchone()
            is not None
        )

    def _turn_text(self, turn_id: int) -> Optional[str]:
        row = self._conn.execute(
            "SELECT text FROM turns WHERE id = ?", (turn_id,)
        ).fetchone()
        return row[0] if row else None

    # -- temporal fact queries -----------------------------------------

    def fact_history(self, subject_id: int, property_name: str) -> list:
        """All matching facts, ascending by (valid_from, created_at, id)."""
        rows = self._conn.execute(
            "SELECT id, subject_id, property_name, value_json, dtype,"
            " valid_from, valid_to, confidence, created_at"
            " FROM facts WHERE subject_id = ? AND property_name = ?",
            (subject_id, property_name),
        ).fetchall()
        rows.sort(
            key=lambda r: (temporal_sort_key(r[5]), temporal_sort_key(r[8]), r[0])
        )
        return [self._row_to_fact(row) for row in rows]

    def latest_fact(
        self,
        subject_id: int,
        property_name: str,
        as_of: Optional[str] = None,
    ) -> Optional[Fact]:
        """Most recent fact whose valid_from is at or before ``as_of``."""
        history = self.fact_history(subject_id, property_name)
        if as_of is not None:
            cutoff = temporal_sort_key(as_of)
            history = [
                fact
                for fact in history
                if fact.valid_from is None
                or temporal_sort_key(fact.valid_from) <= cutoff
            ]
        return history[-1] if history else None

    @staticmethod
    def _row_to_fact(row: tuple) -> Fact:
        dtype = DType(row[4])
        return Fact(
            id=row[0],
            subject_id=row[1],
            property_name=row[2],
            value=ontology.deserialize_value(json.loads(row[3]), dtype),
            dtype=dtype,
            valid_from=row[5],
            valid_to=row[6],
            confidence=row[7],
            created_at=row[8],
        )

    # -- lexical views ---------------------------------------------------

    def rebuild_lexical_views(self) -> dict:
        """Regenerate every lexical view from its base table; idempotent."""
        counts = {}
        with self._conn:
            self._conn.execute("DELETE FROM lex_entities")
            self._conn.execute(
                "INSERT INTO lex_entities (doc_id, text)"
                " SELECT entity_id, entity_name || ' ' ||"
                " (SELECT COALESCE(group_concat(value, ' '), '')"
                "  FROM json_each(aliases_json)) FROM entities"
            )
            self._conn.execute("DELETE FROM lex_facts")
            for fact_id, prop, value_json in self._conn.execute(
                "SELECT id, property_name, value_json FROM facts"
            ).fetchall():
                self._conn.execute(
                    "INSERT INTO lex_facts (doc_id, text) VALUES (?, ?)",
                    (fact_id, f"{prop} {_value_text(value_json)}"),
                )
            self._conn.execute("DELETE FROM lex_events")
            self._conn.execute(
                "INSERT INTO lex_events (doc_id, text)"
                " SELECT id, event_type ||"
                " CASE WHEN location IS NULL THEN '' ELSE ' ' || location END"
                " FROM events"
            )
            self._conn.execute("DELETE FROM lex_evidence")
            self._conn.execute(
                "INSERT INTO lex_evidence (doc_id, text)"
                " SELECT id, quoted_text FROM evidence"
            )
            self._conn.execute("DELETE FROM lex_turns")
            self._conn.execute(
                "INSERT INTO lex_turns (doc_id, text) SELECT id, text FROM turns"
            )
        for view in LEXICAL_VIEWS:
            counts[view] = self._conn.execute(
                f"SELECT COUNT(*) FROM lex_{view}"
            ).fetchone()[0]
        return counts

    def lexical_documents(self, view: str) -> list:
        """(doc_id, text) pairs for one lexical view, ascending by doc_id."""
        if view not in LEXICAL_VIEWS:
            from .errors import UnknownView

            raise UnknownView(f"unknown lexical view: {view}")
        return self._conn.execute(
            f"SELECT doc_id, text FROM lex_{view} ORDER BY doc_id"
        ).fetchall()

    # -- introspection ---------------------------------------------------

    def row_counts(self) -> dict:
        return {
            table: self._conn.execute(f"SELECT COUNT(*) FROM {table}").fetchone()[0]
            for table in WHITELISTED_TABLES
        }

    def entity_row(self, entity_id: int) -> Optional[dict]:
        row = self._conn.execute(
            "SELECT entity_id, entity_name, entity_type, role, aliases_json,"
            " external_id, created_at FROM entities WHERE entity_id = ?",
            (entity_id,),
        ).fetchone()
        if row is None:
            return None
        return {
            "entity_id": row[0],
            "entity_name": row[1],
            "entity_type": row[2],
            "role": row[3],
            "aliases": json.loads(row[4]),
            "external_id": row[5],
            "created_at": row[6],
        }

    def find_entity_by_name(self, name: str) -> Optional[dict]:
        """Case-insensitive match on canonical name or any alias."""
        target = ontology.normalize_name(name).lower()
        for row in self._conn.execute(
            "SELECT entity_id FROM entities ORDER BY entity_id"
        ).fetchall():
            info = self.entity_row(row[0])
            names = [info["entity_name"].lower()] + [
                alias.lower() for alias in info["aliases"]
            ]
            if target in names:
                return info
        return None

    def all_rows(self, table: str) -> list:
        if table not in WHITELISTED_TABLES:
            raise ValidationFailure(f"not a public table: {table}")
        cursor = self._conn.execute(f"SELECT * FROM {table}")
        columns = [c[0] for c in cursor.description]
        return [dict(zip(columns, row)) for row in cursor.fetchall()]

    def subject_properties(self, subject_id: int) -> list:
        rows = self._conn.execute(
            "SELECT DISTINCT property_name FROM facts WHERE subject_id = ?"
            " ORDER BY property_name",
            (subject_id,),
        ).fetchall()
        return [row[0] for row in rows]

    def max_anchor_datetime(self) -> Optional[str]:
        anchors = [
            row[0]
            for row in self._conn.execute(
                "SELECT anchor_datetime FROM turns"
                " UNION SELECT anchor_datetime FROM events"
            ).fetchall()
        ]
        if not anchors:
            return None
        return max(anchors, key=temporal_sort_key)

    # -- replay and snapshots ----------------------------------------------

    def append_log(self) -> list:
        return [
            (row[0], json.loads(row[1]))
            for row in self._conn.execute(
                "SELECT sequence, payload FROM append_log ORDER BY sequence"
            ).fetchall()
        ]

    @classmethod
    def replay(cls, log: list, path: str = ":memory:") -> "Store":
        """Rebuild a store by re-applying a recorded append log."""
        store = cls.open(path, create_if_missing=True)
        for sequence, payload in log:
            store._apply(payload)
            store._conn.execute(
                "INSERT INTO append_log (sequence, payload) VALUES (?, ?)",
                (sequence, json.dumps(payload, sort_keys=True)),
            )
        store._conn.commit()
        return store

    def canonical_dump(self, include_views: bool = True) -> bytes:
        """Deterministic byte rendering of all committed rows.

        Used for replay equality and before/after immutability checks.
        """
        tables = list(WHITELISTED_TABLES) + ["append_log"]
        if include_views:
            tables += [f"lex_{view}" for view in LEXICAL_VIEWS]
        chunks = []
        for table in tables:
            cursor = self._conn.execute(f"SELECT * FROM {table}")
            rows = sorted(repr(row) for row in cursor.fetchall())
            chunks.append(table + "\n" + "\n".join(rows))
        return "\n---\n".join(chunks).encode("utf-8")

    def readonly_connection(self) -> sqlite3.Connection:
        """A second connection for read-only query execution."""
        if self.path == ":memory:":
            return self._conn
        conn = sqlite3.connect(f"file:{self.path}?mode=ro", uri=True)
        return conn
