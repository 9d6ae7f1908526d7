import os

import pytest

from apexmem.errors import (
    DanglingReference,
    SchemaMismatch,
    ValidationFailure,
)
from apexmem.ontology import DType, Event, Evidence, Fact, Role, Turn
from apexmem.store import SCHEMA_VERSION, Store, WHITELISTED_TABLES


def _turn(session="s1", ordinal=0, text="hello world",
          anchor="2024-01-01T00:00:00Z"):
    return Turn(None, session, "Alice", "Assistant", text, anchor, ordinal)


def _event(anchor="2024-01-01T00:00:00Z"):
    return Event(id=None, event_type="conversation", anchor_datetime=anchor)


def test_open_creates_schema(tmp_path):
    path = str(tmp_path / "db.sqlite")
    store = Store.open(path)
    assert store.row_counts()["facts"] == 0
    store.close()
    again = Store.open(path, create_if_missing=False)
    again.close()


def test_open_rejects_foreign_schema(tmp_path):
    path = str(tmp_path / "other.sqlite")
    import sqlite3

    conn = sqlite3.connect(path)
    conn.execute("CREATE TABLE meta (key TEXT PRIMARY KEY, value TEXT)")
    conn.execute("INSERT INTO meta VALUES ('schema_version', '99')")
    conn.commit()
    conn.close()
    with pytest.raises(SchemaMismatch):
        Store.open(path)


def test_whitelisted_tables_exact():
    assert set(WHITELISTED_TABLES) == {
        "events", "facts", "evidence", "entities",
        "event_participants", "properties", "turns",
    }


def test_append_entity_and_lookup(store):
    entity_id = store.append_entity("Alice", "Person", Role.Speaker, ["Ali"],
                                    created_at="2024-01-01T00:00:00Z")
    row = store.find_entity_by_name("alice")
    assert row["entity_id"] == entity_id
    assert store.find_entity_by_name("ALI")["entity_id"] == entity_id
    assert store.find_entity_by_name("nobody") is None


def test_append_turns_rejects_duplicate_ordinal(store):
    store.append_turns([_turn(ordinal=0)])
    with pytest.raises(ValidationFailure):
        store.append_turns([_turn(ordinal=0)])


def test_event_bundle_commits_atomically(store):
    subject = store.append_entity("Alice", "Person", Role.Speaker, [],
                                  created_at="2024-01-01T00:00:00Z")
    [turn_id] = store.append_turns([_turn(text="my favorite color is blue")])
    fact = Fact(None, subject, "favorite_color", "blue", DType.str,
                "2024-01-01", None, 1.0, "2024-01-01T00:00:00Z")
    ev = Evidence(None, None, turn_id, (3, 25), "favorite color is blue", 0)
    committed = store.append_event_bundle(
        _event(), [fact], [ev], [(subject, Role.Speaker)]
    )
    assert len(committed.fact_ids) == 1
    assert len(committed.evidence_ids) == 1
    counts = store.row_counts()
    assert counts["events"] == 1 and counts["facts"] == 1


def test_event_bundle_rejects_dangling_subject(store):
    [turn_id] = store.append_turns([_turn()])
    fact = Fact(None, 999, "favorite_color", "blue", DType.str,
                "2024-01-01", None, 1.0, "2024-01-01T00:00:00Z")
    before = store.canonical_dump()
    with pytest.raises(DanglingReference):
        store.append_event_bundle(_event(), [fact], [], [])
    assert store.canonical_dump() == before  # nothing partially committed


def test_evidence_quote_must_match_span(store):
    subject = store.append_entity("Alice", "Person", Role.Speaker, [],
                                  created_at="2024-01-01T00:00:00Z")
    [turn_id] = store.append_turns([_turn(text="hello world")])
    fact = Fact(None, subject, "likes", "x", DType.str,
                "2024-01-01", None, 1.0, "2024-01-01T00:00:00Z")
    bad = Evidence(None, None, turn_id, (0, 5), "WRONG", 0)
    with pytest.raises(ValidationFailure):
        store.append_event_bundle(_event(), [fact], [bad], [])


def test_fact_history_and_latest_resolution(store):
    subject = store.append_entity("Alice", "Person", Role.Speaker, [],
                                  created_at="2024-01-01T00:00:00Z")
    values = [("blue", "2024-01-01"), ("green", "2024-03-01"),
              ("red", "2024-02-01")]
    for value, valid_from in values:
        fact = Fact(None, subject, "favorite_color", value, DType.str,
                    valid_from, None, 1.0, valid_from + "T00:00:00Z")
        store.append_event_bundle(
            _event(valid_from + "T00:00:00Z"), [fact], [], []
        )
    history = store.fact_history(subject, "favorite_color")
    assert [f.value for f in history] == ["blue", "red", "green"]
    assert store.latest_fact(subject, "favorite_color",
                             "2024-02-15T00:00:00Z").value == "red"
    assert store.latest_fact(subject, "favorite_color",
                             "2025-01-01T00:00:00Z").value == "green"
    assert store.latest_fact(subject, "favorite_color",
                             "2023-01-01T00:00:00Z") is None


def test_replay_reconstructs_store(store, tmp_path):
    subject = store.append_entity("Alice", "Person", Role.Speaker, [],
                                  created_at="2024-01-01T00:00:00Z")
    store.append_turns([_turn()])
    fact = Fact(None, subject, "favorite_color", "blue", DType.str,
                "2024-01-01", None, 1.0, "2024-01-01T00:00:00Z")
    store.append_event_bundle(_event(), [fact], [], [(subject, Role.Speaker)])
    log = store.append_log()
    replica = Store.replay(log, ":memory:")
    assert replica.canonical_dump() == store.canonical_dump()
    replica.close()


def test_append_log_grows_monotonically(store):
    assert store.append_log() == []
    store.append_entity("A", "Person", Role.Speaker, [],
                        created_at="2024-01-01T00:00:00Z")
    first = store.append_log()
    store.append_entity("B", "Person", Role.Speaker, [],
                        created_at="2024-01-01T00:00:00Z")
    second = store.append_log()
    assert second[: len(first)] == first
    assert len(second) == len(first) + 1


def test_rebuild_lexical_views(case1_store):
    counts = case1_store.rebuild_lexical_views()
    assert counts["entities"] >= 3
    docs = case1_store.lexical_documents("entities")
    assert any("Italian Garden" in text for _, text in docs)


def test_schema_version_recorded(store):
    assert store.schema_version() == SCHEMA_VERSION
