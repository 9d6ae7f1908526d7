"""apexmem: an embeddable temporal property-graph memory engine.

Facts are never mutated in place; revisions append new rows with validity
intervals, and conflicts are resolved at retrieval time.
"""
from .agent import (
    AgentConfig,
    AgentTranscript,
    FinalAnswer,
    HeuristicPolicy,
    ScriptedPolicy,
    ToolAction,
    run_agent,
)
from .errors import ApexMemError
from .extract import ExtractionRequest, ReferenceExtractor, extract_turn, ingest_session
from .index import TrigramEmbedder, VectorIndex, hybrid_search, upsert_embeddings
from .online import Document, OnlineConfig, build_online, score_relevance
from .ontology import DType, Entity, EntityType, Event, Evidence, Fact, Role, Turn
from .resolve import RuleBasedProvider, resolve_entity, resolve_property
from .sqlguard import validate_sql
from .store import Store
from .synth import generate_corpus, run_synth_eval
from .tools import ToolCall, ToolKit, ToolResult

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "AgentTranscript",
    "ApexMemError",
    "Document",
    "DType",
    "Entity",
    "EntityType",
    "Event",
    "Evidence",
    "ExtractionRequest",
    "Fact",
    "FinalAnswer",
    "HeuristicPolicy",
    "OnlineConfig",
    "ReferenceExtractor",
    "Role",
    "RuleBasedProvider",
    "ScriptedPolicy",
    "Store",
    "ToolAction",
    "ToolCall",
    "ToolKit",
    "ToolResult",
    "TrigramEmbedder",
    "Turn",
    "VectorIndex",
    "build_online",
    "extract_turn",
    "generate_corpus",
    "hybrid_search",
    "ingest_session",
    "resolve_entity",
    "resolve_property",
    "run_agent",
    "run_synth_eval",
    "score_relevance",
    "upsert_embeddings",
    "validate_sql",
]
