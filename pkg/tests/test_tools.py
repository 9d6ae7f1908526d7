import json

import pytest

from apexmem.index import VectorIndex
from apexmem.ontology import DType, Event, Fact, Role
from apexmem.tools import (
    CHAR_CAP,
    ROW_CAP,
    TOOL_ARG_SCHEMAS,
    TOOL_NAMES,
    ToolCall,
    ToolKit,
    build_entity_document,
    entity_lookup,
    graph_sql,
    render_markdown_table,
    schema_viewer,
    search,
)
from conftest import ingest_case1


@pytest.fixture
def toolkit(store, index):
    ingest_case1(store, index)
    return ToolKit(store, index)


def test_tool_names_and_schemas_agree():
    assert set(TOOL_NAMES) == set(TOOL_ARG_SCHEMAS)


def test_schema_viewer_lists_tables_and_examples():
    result = schema_viewer(include_examples=True, include_guide=True)
    assert result.ok
    for table in ("entities", "facts", "events", "evidence",
                  "event_participants", "properties", "turns"):
        assert table in result.text
    assert "AGGREGATE" in result.text


def test_render_markdown_table_escapes_pipes():
    text = render_markdown_table(["col"], [["a|b"]])
    assert "a\\|b" in text


def test_entity_lookup_returns_latest_values(toolkit):
    result = toolkit.dispatch(ToolCall("entity_lookup", {"query": "Alice"}))
    assert result.ok
    assert "favorite_restaurant" in result.text
    assert "Sakura Sushi" in result.text


def test_entity_document_includes_history(store, index):
    ingest_case1(store, index)
    alice = store.find_entity_by_name("Alice")
    doc = build_entity_document(store, alice["entity_id"])
    assert "Italian Garden" in doc.facts and "Sakura Sushi" in doc.facts


def test_graph_sql_happy_path(toolkit):
    result = toolkit.dispatch(ToolCall("graph_sql", {
        "sql": "SELECT entity_name FROM entities ORDER BY entity_id",
    }))
    assert result.ok
    assert "Alice" in result.text


def test_graph_sql_rejection_is_in_band(toolkit):
    result = toolkit.dispatch(ToolCall("graph_sql", {"sql": "DELETE FROM facts"}))
    assert not result.ok
    assert "SqlRejected" in result.error


def test_graph_sql_runtime_error_is_in_band(toolkit):
    result = toolkit.dispatch(ToolCall("graph_sql", {
        "sql": "SELECT no_such_column FROM facts",
    }))
    assert not result.ok
    assert "SqlRuntimeError" in result.error


def test_graph_sql_missing_param_is_in_band(toolkit):
    result = toolkit.dispatch(ToolCall("graph_sql", {
        "sql": "SELECT * FROM facts WHERE valid_from <= :question_date",
    }))
    assert not result.ok


def test_graph_sql_binds_default_params(toolkit):
    result = toolkit.dispatch(
        ToolCall("graph_sql", {
            "sql": "SELECT date(:question_date) AS d",
        }),
        default_params={"question_date": "2024-04-01"},
    )
    assert result.ok
    assert "2024-04-01" in result.text


def test_graph_sql_row_cap(store, index):
    subject = store.append_entity("Alice", "Person", Role.Speaker, [],
                                  created_at="2024-01-01T00:00:00Z")
    facts = [
        Fact(None, subject, "counter", i, DType.int, "2024-01-01", None, 1.0,
             "2024-01-01T00:00:00Z")
        for i in range(ROW_CAP + 50)
    ]
    store.append_event_bundle(
        Event(None, "conversation", "2024-01-01T00:00:00Z"), facts, [], []
    )
    result = graph_sql(store, "SELECT id FROM facts")
    assert result.ok
    assert "truncated" in result.text
    assert result.text.count("\n") <= ROW_CAP + 5
    assert len(result.text) <= CHAR_CAP + 100


def test_graph_sql_leaves_store_untouched(toolkit, store):
    before = store.canonical_dump()
    toolkit.dispatch(ToolCall("graph_sql", {"sql": "SELECT * FROM facts"}))
    toolkit.dispatch(ToolCall("graph_sql", {"sql": "DELETE FROM facts"}))
    assert store.canonical_dump() == before


def test_search_sections(toolkit):
    result = toolkit.dispatch(ToolCall("search", {"query": "sushi restaurant"}))
    assert result.ok
    assert "Entities" in result.text
    assert "Sakura Sushi" in result.text


def test_property_search(toolkit):
    result = toolkit.dispatch(ToolCall("property_search", {"query": "restaurant"}))
    assert result.ok
    assert "favorite_restaurant" in result.text


def test_dispatch_validates_args(toolkit):
    bad = toolkit.dispatch(ToolCall("entity_lookup", {"nope": 1}))
    assert not bad.ok
    unknown = toolkit.dispatch(ToolCall("time_travel", {}))
    assert not unknown.ok


def test_arg_schemas_are_json_serializable():
    json.dumps(TOOL_ARG_SCHEMAS)
