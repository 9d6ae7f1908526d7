"""Entity and property canonicalization: candidate retrieval over the
dense index plus a pluggable structured decision provider.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, List, Optional, Protocol

from . import ontology
from .errors import InvalidDecision, ProviderFailure, Unnormalizable
from .index import VectorIndex
from .ontology import DType, EntityType
from .store import Store

DEFAULT_K = 10

# rule-based provider thresholds: choose_existing at or above the upper
# bound (or on exact match), propose_new below the lower bound, "none"
# in the ambiguous band between them
CHOOSE_THRESHOLD = 0.95
PROPOSE_THRESHOLD = 0.80


@dataclass(frozen=True)
class Candidate:
    id: int
    text: str
    score: float
    name: str = ""

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvalidDecision(f"candidate score out of range: {self.score}")


@dataclass(frozen=True)
class ResolutionDecision:
    decision: str  # choose_existing | propose_new | none
    id: Optional[int] = None
    normalized_name: str = ""
    etype: Optional[EntityType] = None
    dtype: Optional[DType] = None
    aliases: frozenset = frozenset()
    confidence: float = 0.0
    rationale: str = ""

    def __post_init__(self):
        if self.decision not in ("choose_existing", "propose_new", "none"):
            raise InvalidDecision(f"unknown decision: {self.decision!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidDecision(f"confidence out of range: {self.confidence}")
        object.__setattr__(self, "aliases", frozenset(self.aliases))

    def to_json(self) -> str:
        return json.dumps(
            {
                "decision": self.decision,
                "id": self.id,
                "normalized_name": self.normalized_name,
                "etype": self.etype.value if self.etype else None,
                "dtype": self.dtype.value if self.dtype else None,
                "aliases": sorted(self.aliases),
                "confidence": self.confidence,
                "rationale": self.rationale,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ResolutionDecision":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ProviderFailure(f"provider output not JSON: {exc}") from exc
        return cls(
            decision=raw.get("decision", ""),
            id=raw.get("id"),
            normalized_name=raw.get("normalized_name", ""),
            etype=ontology.validate_entity_type(raw["etype"]) if raw.get("etype") else None,
            dtype=DType(raw["dtype"]) if raw.get("dtype") else None,
            aliases=frozenset(raw.get("aliases", ())),
            confidence=raw.get("confidence", 0.0),
            rationale=raw.get("rationale", ""),
        )


class DecisionProvider(Protocol):
    def decide(
        self, mention: str, context: str, candidates: List[Candidate]
    ) -> ResolutionDecision: ...


def normalize_snake_case(raw: str) -> str:
    """Lowercase, collapse non-alphanumeric runs to single underscores."""
    if not raw:
        raise Unnormalizable("empty property name")
    # split CamelCase boundaries before lowering
    spaced = re.sub(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])", "_", raw)
    lowered = re.sub(r"[^a-z0-9]+", "_", spaced.lower()).strip("_")
    lowered = re.sub(r"^[0-9_]+", "", lowered)
    if not lowered or not re.match(r"^[a-z][a-z0-9_]*$", lowered):
        raise Unnormalizable(f"cannot normalize to snake_case: {raw!r}")
    return lowered


def render_entity_text(name: str, etype: str, aliases: Iterable[str]) -> str:
    alias_text = ", ".join(sorted(aliases))
    rendered = f"{name} ({etype})"
    if alias_text:
        rendered += f" — {alias_text}"
    return rendered


def retrieve_entity_candidates(
    store: Store, index: VectorIndex, mention: str, k: int = DEFAULT_K
) -> List[Candidate]:
    """Top-k stored entities by cosine similarity to the mention embedding."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query_vector = index.embed(mention)
    scored = index.dense_scores("entity", query_vector)
    ranked = sorted(scored.items(), key=lambda item: (-item[1], item[0]))[:k]
    candidates = []
    for entity_id, score in ranked:
        row = store.entity_row(entity_id)
        if row is None:
            continue
        candidates.append(
            Candidate(
                id=entity_id,
                text=render_entity_text(
                    row["entity_name"], row["entity_type"], row["aliases"]
                ),
                score=max(0.0, min(1.0, score)),
                name=row["entity_name"],
            )
        )
    return candidates


def retrieve_property_candidates(
    store: Store, index: VectorIndex, name: str, k: int = DEFAULT_K
) -> List[Candidate]:
    query_vector = index.embed(name)
    scored = index.dense_scores("property", query_vector)
    ranked = sorted(scored.items(), key=lambda item: (-item[1], item[0]))[:k]
    candidates = []
    for property_id, score in ranked:
        row = store._conn.execute(
            "SELECT property_name, dtype FROM properties WHERE property_id = ?",
            (property_id,),
        ).fetchone()
        if row is None:
            continue
        candidates.append(
            Candidate(
                id=property_id,
                text=f"{row[0]} ({row[1]})",
                score=max(0.0, min(1.0, score)),
                name=row[0],
            )
        )
    return candidates


class RuleBasedProvider:
    """Deterministic reference provider.

    choose_existing on an exact case-insensitive name/alias match or a top
    candidate score >= 0.95; propose_new when the best score < 0.80; "none"
    in the ambiguous band.
    """

    def __init__(self, default_etype: Optional[EntityType] = None):
        self.default_etype = default_etype

    def decide(
        self, mention: str, context: str, candidates: List[Candidate]
    ) -> ResolutionDecision:
        normalized = ontology.normalize_name(mention)
        for candidate in candidates:
            if candidate.name.lower() == normalized.lower():
                return ResolutionDecision(
                    decision="choose_existing",
                    id=candidate.id,
                    normalized_name=candidate.name,
                    confidence=max(candidate.score, 0.95),
                    rationale="exact case-insensitive name match",
                )
        if candidates and candidates[0].score >= CHOOSE_THRESHOLD:
            best = candidates[0]
            return ResolutionDecision(
                decision="choose_existing",
                id=best.id,
                normalized_name=best.name,
                confidence=best.score,
                rationale="top candidate above similarity threshold",
            )
        if not candidates or candidates[0].score < PROPOSE_THRESHOLD:
            return ResolutionDecision(
                decision="propose_new",
                normalized_name=normalized,
                etype=self.default_etype,
                confidence=0.5,
                rationale="no sufficiently similar candidate",
            )
        return ResolutionDecision(
            decision="none",
            confidence=0.0,
            rationale="ambiguous: best candidate in the undecidable band",
        )


def resolve_entity(
    store: Store,
    index: VectorIndex,
    provider: DecisionProvider,
    mention: str,
    context: str = "",
    k: int = DEFAULT_K,
    etype: Optional[EntityType] = None,
) -> ResolutionDecision:
    """Resolve a mention to an existing entity or a proposal for a new one."""
    candidates = retrieve_entity_candidates(store, index, mention, k)
    try:
        decision = provider.decide(mention, context, candidates)
    except InvalidDecision:
        raise
    except Exception as exc:
        raise ProviderFailure(str(exc)) from exc
    if not isinstance(decision, ResolutionDecision):
        raise InvalidDecision("provider returned a non-decision value")

    if decision.decision == "choose_existing":
        if decision.id is None or store.entity_row(decision.id) is None:
            raise InvalidDecision(
                f"choose_existing names unknown entity id {decision.id}"
            )
        return decision
    if decision.decision == "propose_new":
        name = decision.normalized_name or ontology.normalize_name(mention)
        resolved_etype = decision.etype or etype or EntityType.Topic
        return ResolutionDecision(
            decision="propose_new",
            id=store.peek_next_entity_id(),
            normalized_name=ontology.normalize_name(name),
            etype=resolved_etype,
            aliases=decision.aliases,
            confidence=decision.confidence,
            rationale=decision.rationale,
        )
    return decision


def resolve_property(
    store: Store,
    index: VectorIndex,
    provider: DecisionProvider,
    raw_name: str,
    example_value: Any = None,
    k: int = DEFAULT_K,
) -> ResolutionDecision:
    """Resolve a raw property name to a canonical snake_case property."""
    if not raw_name:
        raise InvalidDecision("empty property name")
    try:
        normalized = normalize_snake_case(raw_name)
    except Unnormalizable as exc:
        raise InvalidDecision(str(exc)) from exc

    dtype = None
    if example_value is not None:
        dtype = ontology.infer_dtype(example_value)

    candidates = retrieve_property_candidates(store, index, normalized, k)
    for candidate in candidates:
        if candidate.name == normalized:
            return ResolutionDecision(
                decision="choose_existing",
                id=candidate.id,
                normalized_name=normalized,
                dtype=dtype,
                confidence=max(candidate.score, 0.95),
                rationale="exact property name match",
            )
    try:
        decision = provider.decide(raw_name, "", candidates)
    except InvalidDecision:
        raise
    except Exception as exc:
        raise ProviderFailure(str(exc)) from exc
    if decision.decision == "choose_existing":
        row = store._conn.execute(
            "SELECT property_name FROM properties WHERE property_id = ?",
            (decision.id,),
        ).fetchone()
        if row is None:
            raise InvalidDecision(
                f"choose_existing names unknown property id {decision.id}"
            )
        return ResolutionDecision(
            decision="choose_existing",
            id=decision.id,
            normalized_name=row[0],
            dtype=dtype,
            confidence=decision.confidence,
            rationale=decision.rationale,
        )
    if decision.decision == "propose_new":
        return ResolutionDecision(
            decision="propose_new",
            normalized_name=normalized,
            dtype=dtype or DType.str,
            confidence=decision.confidence,
            rationale=decision.rationale,
        )
    return decision
