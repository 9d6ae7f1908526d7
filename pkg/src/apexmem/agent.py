"""ReAct-style QnA loop: reason -> tool -> observe under a call budget,
with query-time temporal resolution and provenance-carrying answers.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Tuple, Union

from . import extract
from .errors import ProviderFailure, UnparseableTemporal, ValidationFailure
from .index import VectorIndex, tokenize
from .ontology import parse_iso_datetime
from .store import Store
from .tools import ToolCall, ToolKit, ToolResult

DEFAULT_MAX_TOOL_CALLS = 40


@dataclass(frozen=True)
class AgentConfig:
    max_tool_calls: int = DEFAULT_MAX_TOOL_CALLS
    question_date: Optional[str] = None
    trace_enabled: bool = False

    def __post_init__(self):
        if self.max_tool_calls < 1:
            raise ValidationFailure("max_tool_calls must be >= 1")


@dataclass(frozen=True)
class FinalAnswer:
    text: str
    cited_evidence: Tuple[int, ...] = ()
    confidence: Optional[float] = None


@dataclass(frozen=True)
class AgentStep:
    reasoning: str
    call: ToolCall
    result: ToolResult


@dataclass(frozen=True)
class ToolAction:
    reasoning: str
    call: ToolCall


@dataclass
class AgentTranscript:
    question: str
    steps: List[AgentStep] = field(default_factory=list)
    answer: Optional[FinalAnswer] = None
    terminated_reason: str = ""
    named_params: dict = field(default_factory=dict)


class PolicyProvider(Protocol):
    def step(
        self, question: str, history: List[AgentStep]
    ) -> Union[ToolAction, FinalAnswer]: ...


_TEMPORAL_PATTERNS = (
    "last month",
    "last week",
    "yesterday",
    "today",
    "tomorrow",
)

_AGO_IN_TEXT = re.compile(r"\b(\d+)\s+(day|week|month)s?\s+ago\b", re.I)


@dataclass(frozen=True)
class TemporalAnnotation:
    expression: str
    valid_from: str
    valid_to: Optional[str]


@dataclass(frozen=True)
class AnnotatedQuestion:
    text: str
    question_date: str
    annotations: Tuple[TemporalAnnotation, ...]

    def named_params(self) -> dict:
        params = {"question_date": self.question_date.split("T")[0]}
        if self.annotations:
            first = self.annotations[0]
            params["range_start"] = first.valid_from
            params["range_end"] = first.valid_to or first.valid_from
        return params


def resolve_question_temporals(question: str, question_date: str) -> AnnotatedQuestion:
    """Annotate relative temporal expressions in the question with their
    resolution against the question date. Unrecognized expressions pass
    through unannotated."""
    parse_iso_datetime(question_date)
    annotations = []
    lowered = question.lower()
    for pattern in _TEMPORAL_PATTERNS:
        if pattern in lowered:
            valid_from, valid_to = extract.normalize_temporal(pattern, question_date)
            annotations.append(TemporalAnnotation(pattern, valid_from, valid_to))
    for match in _AGO_IN_TEXT.finditer(question):
        try:
            valid_from, valid_to = extract.normalize_temporal(
                match.group(0).lower(), question_date
            )
        except UnparseableTemporal:
            continue
        annotations.append(TemporalAnnotation(match.group(0), valid_from, valid_to))
    return AnnotatedQuestion(question, question_date, tuple(annotations))


def run_agent(
    store: Store,
    index: VectorIndex,
    policy: PolicyProvider,
    question: str,
    config: Optional[AgentConfig] = None,
    toolkit: Optional[ToolKit] = None,
) -> AgentTranscript:
    """Drive the policy against the tools until it answers, fails, or the
    call budget runs out. Tool failures are passed back in-band and never
    terminate the loop."""
    config = config or AgentConfig()
    toolkit = toolkit or ToolKit(store, index)

    question_date = config.question_date or store.max_anchor_datetime() or "1970-01-01T00:00:00Z"
    annotated = resolve_question_temporals(question, question_date)
    named_params = annotated.named_params()

    transcript = AgentTranscript(question=question, named_params=named_params)
    retried = False

    while len(transcript.steps) < config.max_tool_calls:
        try:
            output = policy.step(question, list(transcript.steps))
        except Exception as exc:
            raise ProviderFailure(str(exc)) from exc

        if isinstance(output, FinalAnswer):
            for cited in output.cited_evidence:
                if not _evidence_or_turn_exists(store, cited):
                    output = FinalAnswer(output.text, (), output.confidence)
                    break
            transcript.answer = output
            transcript.terminated_reason = "answered"
            return transcript

        if not isinstance(output, ToolAction):
            if retried:
                transcript.terminated_reason = "provider_failure"
                return transcript
            retried = True
            # one bounded re-prompt: feed the malformed output back in-band
            transcript.steps.append(
                AgentStep(
                    reasoning="",
                    call=ToolCall("schema_viewer", {}),
                    result=ToolResult(
                        ok=False,
                        error=(
                            "malformed policy output; respond with a tool call "
                            "or a final answer: " + repr(output)[:200]
                        ),
                    ),
                )
            )
            continue

        result = toolkit.dispatch(output.call, default_params=named_params)
        transcript.steps.append(AgentStep(output.reasoning, output.call, result))

    transcript.terminated_reason = "budget_exhausted"
    return transcript


def _evidence_or_turn_exists(store: Store, item_id: int) -> bool:
    row = store._conn.execute(
        "SELECT 1 FROM evidence WHERE id = ? UNION SELECT 1 FROM turns WHERE id = ?",
        (item_id, item_id),
    ).fetchone()
    return row is not None


def render_transcript(transcript: AgentTranscript, result_chars: int = 600) -> str:
    """Deterministic, human-readable trace."""
    lines = [f"question: {transcript.question}"]
    for number, step in enumerate(transcript.steps, start=1):
        lines.append(f"== step {number} ==")
        if step.reasoning:
            lines.append(f"reasoning: {step.reasoning}")
        lines.append(
            f"tool: {step.call.tool} args: {json.dumps(step.call.args, sort_keys=True)}"
        )
        body = step.result.text if step.result.ok else f"ERROR: {step.result.error}"
        if len(body) > result_chars:
            body = body[:result_chars] + "..."
        lines.append(f"result: {body}")
    lines.append(f"terminated: {transcript.terminated_reason}")
    if transcript.answer is not None:
        lines.append(f"answer: {transcript.answer.text}")
        if transcript.answer.cited_evidence:
            cited = ", ".join(str(i) for i in transcript.answer.cited_evidence)
            lines.append(f"cited: {cited}")
    return "\n".join(lines)


class ScriptedPolicy:
    """Replays a fixed list of ToolAction / FinalAnswer outputs."""

    def __init__(self, outputs: List[Union[ToolAction, FinalAnswer]]):
        self.outputs = list(outputs)
        self.position = 0

    def step(self, question, history):
        if self.position >= len(self.outputs):
            raise ProviderFailure("script exhausted without an answer")
        output = self.outputs[self.position]
        self.position += 1
        return output


_STOPWORDS = frozenset(
    "what is are was were the a an of s current currently in on at to for "
    "who whose which how many much did does do when where why".split()
)


class HeuristicPolicy:
    """Deterministic reference policy: look up the best-matching entity,
    then answer with the latest value of the property whose name best
    overlaps the question."""

    def __init__(self, store: Store):
        self.store = store
        self._looked_up = False

    def step(self, question, history):
        if not self._looked_up:
            self._looked_up = True
            return ToolAction(
                reasoning="canonicalize the subject of the question",
                call=ToolCall("entity_lookup", {"query": question, "k": 3}),
            )
        question_tokens = set(tokenize(question)) - _STOPWORDS
        best = None
        for row in self.store._conn.execute(
            "SELECT entity_id FROM entities ORDER BY entity_id"
        ).fetchall():
            entity_id = row[0]
            info = self.store.entity_row(entity_id)
            name_tokens = set(tokenize(info["entity_name"]))
            if not name_tokens & question_tokens:
                continue
            for prop in self.store.subject_properties(entity_id):
                overlap = len(set(prop.split("_")) & question_tokens)
                if overlap == 0:
                    continue
                fact = self.store.latest_fact(entity_id, prop)
                if fact is None:
                    continue
                key = (overlap, entity_id, prop)
                if best is None or key > (best[0], best[1], best[2]):
                    best = (overlap, entity_id, prop, fact)
        if best is None:
            return FinalAnswer("I could not find an answer in memory.")
        fact = best[3]
        value = fact.value
        if not isinstance(value, str):
            value = json.dumps(value)
        return FinalAnswer(str(value))
