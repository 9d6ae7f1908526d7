"""Query-time graph construction: score corpus relevance to the question
and only ingest the relevant, temporally ordered subset.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

from . import extract
from .errors import ValidationFailure
from .index import (
    FUSION_ALPHA,
    VectorIndex,
    bm25_scores,
    cosine,
    minmax_normalize,
)
from .ontology import Turn, temporal_sort_key
from .store import Store

DEFAULT_THETA_REL = 0.2


@dataclass(frozen=True)
class OnlineConfig:
    theta_rel: float = DEFAULT_THETA_REL
    max_docs: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.theta_rel <= 1.0:
            raise ValidationFailure(f"theta_rel out of range: {self.theta_rel}")


@dataclass(frozen=True)
class Document:
    doc_id: str
    timestamp: str
    turns: tuple

    def text(self) -> str:
        return "\n".join(turn.text for turn in self.turns)


@dataclass(frozen=True)
class RelevanceScore:
    doc_id: str
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValidationFailure(f"relevance score out of range: {self.score}")


@dataclass
class IngestionReport:
    selected: List[RelevanceScore] = field(default_factory=list)
    skipped: List[RelevanceScore] = field(default_factory=list)
    outcomes: Dict[str, list] = field(default_factory=dict)


def score_relevance(
    corpus: List[Document],
    question: str,
    index: Optional[VectorIndex] = None,
    alpha: float = FUSION_ALPHA,
) -> List[RelevanceScore]:
    """Per-document fused hybrid score, min-max normalized to [0,1] over the
    corpus. A single document (or all-equal raw scores) normalizes to 1.0."""
    if not corpus:
        return []
    index = index or VectorIndex()
    question_vector = index.embed(question)
    keyed = list(enumerate(corpus))
    dense_raw = {
        i: cosine(question_vector, index.embed(doc.text())) for i, doc in keyed
    }
    lexical_raw = bm25_scores([(i, doc.text()) for i, doc in keyed], question)
    lexical_full = {i: lexical_raw.get(i, 0.0) for i, _ in keyed}
    dense_norm = minmax_normalize(dense_raw)
    lexical_norm = minmax_normalize(lexical_full)
    fused = {
        i: alpha * dense_norm[i] + (1.0 - alpha) * lexical_norm[i] for i, _ in keyed
    }
    normalized = minmax_normalize(fused)
    return [RelevanceScore(doc.doc_id, normalized[i]) for i, doc in keyed]


def build_online(
    store: Store,
    index: VectorIndex,
    extractor,
    entity_provider,
    property_provider,
    corpus: List[Document],
    question: str,
    config: Optional[OnlineConfig] = None,
    scores: Optional[List[RelevanceScore]] = None,
) -> IngestionReport:
    """Ingest documents scoring strictly above theta_rel, in ascending
    timestamp order. ``scores`` may inject precomputed relevance (fixtures,
    external scorers); by default they are computed here."""
    config = config or OnlineConfig()
    if scores is None:
        scores = score_relevance(corpus, question, index)
    by_id = {score.doc_id: score for score in scores}

    report = IngestionReport()
    selected_docs = []
    for doc in corpus:
        score = by_id.get(doc.doc_id, RelevanceScore(doc.doc_id, 0.0))
        if score.score > config.theta_rel:
            selected_docs.append(doc)
            report.selected.append(score)
        else:
            report.skipped.append(score)

    selected_docs.sort(key=lambda d: temporal_sort_key(d.timestamp))
    report.selected.sort(
        key=lambda s: temporal_sort_key(
            next(d.timestamp for d in corpus if d.doc_id == s.doc_id)
        )
    )
    if config.max_docs is not None:
        selected_docs = selected_docs[: config.max_docs]
        report.selected = report.selected[: config.max_docs]

    for doc in selected_docs:
        outcomes = extract.ingest_session(
            store, index, extractor, entity_provider, property_provider,
            list(doc.turns),
        )
        report.outcomes[doc.doc_id] = outcomes
    return report


def document_from_json(raw: dict) -> Document:
    """Corpus JSONL contract: {doc_id, timestamp, turns: [turn objects]}."""
    turns = tuple(
        Turn(
            id=None,
            session_id=t.get("session_id", raw["doc_id"]),
            ordinal=t["ordinal"],
            speaker=t["speaker"],
            listener=t["listener"],
            text=t["text"],
            anchor_datetime=t["anchor_datetime"],
        )
        for t in raw["turns"]
    )
    return Document(doc_id=str(raw["doc_id"]), timestamp=raw["timestamp"], turns=turns)
