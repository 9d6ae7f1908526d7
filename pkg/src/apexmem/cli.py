"""Command-line surface: ingest transcripts, run QnA, inspect stores, and
run the synthetic temporal evaluation.

Providers default to the shipped reference implementations; external
plugin commands can be configured via a key=value config file (path in
APEXMEM_CONFIG or --config) with flags taking precedence.
"""
from __future__ import annotations

import json
import os
import shlex
import sys
from typing import Optional

import click

from . import extract as extract_mod
from . import index as index_mod
from . import online as online_mod
from . import synth as synth_mod
from .agent import (
    AgentConfig,
    FinalAnswer,
    HeuristicPolicy,
    ScriptedPolicy,
    ToolAction,
    render_transcript,
    run_agent,
)
from .errors import ApexMemError, ParseError, ProviderFailure, UnknownEntity
from .extract import ReferenceExtractor
from .index import VectorIndex
from .ontology import Turn
from .providers import (
    SubprocessDecisionProvider,
    SubprocessEmbedder,
    SubprocessExtractor,
    SubprocessPolicy,
)
from .resolve import RuleBasedProvider
from .store import Store
from .tools import ToolCall, schema_viewer

CONFIG_ENV = "APEXMEM_CONFIG"


def load_config(path: Optional[str]) -> dict:
    """key=value text config; blank lines and # comments ignored."""
    path = path or os.environ.get(CONFIG_ENV)
    config: dict = {}
    if not path or not os.path.exists(path):
        return config
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, _, value = line.partition("=")
            config[key.strip()] = value.strip()
    return config


def _provider(spec: Optional[str], reference_factory, subprocess_factory):
    if not spec or spec == "reference":
        return reference_factory()
    return subprocess_factory(shlex.split(spec))


def build_pipeline(config: dict):
    extractor = _provider(
        config.get("extractor"), ReferenceExtractor, SubprocessExtractor
    )
    entity_provider = _provider(
        config.get("decision"), RuleBasedProvider, SubprocessDecisionProvider
    )
    property_provider = _provider(
        config.get("decision"), RuleBasedProvider, SubprocessDecisionProvider
    )
    embedder_spec = config.get("embedder")
    embedder = (
        SubprocessEmbedder(shlex.split(embedder_spec))
        if embedder_spec and embedder_spec != "reference"
        else None
    )
    return extractor, entity_provider, property_provider, embedder


def open_index(store_path: str, embedder=None) -> VectorIndex:
    sidecar = VectorIndex.sidecar_path(store_path) if store_path != ":memory:" else None
    return VectorIndex(embedder=embedder, path=sidecar)


def read_transcript(path: str):
    """JSONL transcript: one {session_id, ordinal, speaker, listener, text,
    anchor_datetime} object per line, grouped into sessions."""
    sessions: dict = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                turn = Turn(
                    id=None,
                    session_id=str(raw["session_id"]),
                    ordinal=int(raw["ordinal"]),
                    speaker=raw["speaker"],
                    listener=raw["listener"],
                    text=raw["text"],
                    anchor_datetime=raw["anchor_datetime"],
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"line {line_number}: {exc}") from exc
            sessions.setdefault(turn.session_id, []).append(turn)
    return sessions


@click.group()
@click.option("--config", "config_path", default=None, help="key=value config file")
@click.pass_context
def main(ctx, config_path):
    """Temporal property-graph conversational memory engine."""
    ctx.obj = load_config(config_path)


@main.command()
@click.argument("transcript", type=click.Path(exists=True))
@click.option("--store", "store_path", required=True, help="store file path")
@click.option("--json", "as_json", is_flag=True, help="machine-readable output")
@click.pass_obj
def ingest(config, transcript, store_path, as_json):
    """Ingest a JSONL transcript into a store."""
    try:
        sessions = read_transcript(transcript)
    except ParseError as exc:
        click.echo(f"parse error: {exc}", err=True)
        sys.exit(1)

    extractor, entity_provider, property_provider, embedder = build_pipeline(config)
    store = Store.open(store_path)
    index = open_index(store_path, embedder)

    failures = []
    turns = 0
    for session_id in sorted(sessions):
        outcomes = extract_mod.ingest_session(
            store, index, extractor, entity_provider, property_provider,
            sessions[session_id],
        )
        turns += len(outcomes)
        failures.extend(o for o in outcomes if not o.ok)
    counts = store.row_counts()
    index.save()
    summary = {
        "turns": turns,
        "events": counts["events"],
        "facts": counts["facts"],
        "entities": counts["entities"],
        "failed_turns": [
            {"session_id": o.session_id, "ordinal": o.ordinal, "error": o.error}
            for o in failures
        ],
    }
    if as_json:
        click.echo(json.dumps(summary, sort_keys=True))
    else:
        click.echo(
            f"ingested {summary['turns']} turns: {summary['events']} events, "
            f"{summary['facts']} facts, {summary['entities']} entities"
        )
        for failure in summary["failed_turns"]:
            click.echo(
                f"  failed turn ({failure['session_id']}, {failure['ordinal']}): "
                f"{failure['error']}",
                err=True,
            )
    store.close()


def _load_policy(spec: Optional[str], store: Store):
    if not spec or spec == "reference":
        return HeuristicPolicy(store)
    if spec.startswith("script:"):
        path = spec[len("script:"):]
        with open(path, "r", encoding="utf-8") as handle:
            raw_steps = json.load(handle)
        outputs = []
        for raw in raw_steps:
            if "answer" in raw:
                outputs.append(
                    FinalAnswer(
                        raw["answer"],
                        tuple(raw.get("cited_evidence", ())),
                        raw.get("confidence"),
                    )
                )
            else:
                outputs.append(
                    ToolAction(raw.get("reasoning", ""),
                               ToolCall(raw["tool"], raw.get("args", {})))
                )
        return ScriptedPolicy(outputs)
    return SubprocessPolicy(shlex.split(spec))


@main.command()
@click.argument("question")
@click.option("--store", "store_path", required=True)
@click.option("--question-date", default=None)
@click.option("--max-tool-calls", default=40, type=int)
@click.option("--trace", is_flag=True)
@click.option("--policy", "policy_spec", default=None,
              help='"reference", "script:<file>", or a plugin command')
@click.option("--online", "corpus_path", default=None, type=click.Path(exists=True),
              help="build the store online from this corpus JSONL first")
@click.option("--theta-rel", default=online_mod.DEFAULT_THETA_REL, type=float)
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def qa(config, question, store_path, question_date, max_tool_calls, trace,
       policy_spec, corpus_path, theta_rel, as_json):
    """Answer a question using the agent loop. Exit 0 answered, 2 budget
    exhausted, 3 provider failure."""
    extractor, entity_provider, property_provider, embedder = build_pipeline(config)
    store = Store.open(store_path)
    index = open_index(store_path, embedder)

    if corpus_path:
        corpus = []
        with open(corpus_path, "r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    corpus.append(online_mod.document_from_json(json.loads(line)))
        online_mod.build_online(
            store, index, extractor, entity_provider, property_provider,
            corpus, question, online_mod.OnlineConfig(theta_rel=theta_rel),
        )

    policy = _load_policy(policy_spec or config.get("policy"), store)
    agent_config = AgentConfig(
        max_tool_calls=max_tool_calls,
        question_date=question_date,
        trace_enabled=trace,
    )
    try:
        transcript = run_agent(store, index, policy, question, agent_config)
    except ProviderFailure as exc:
        click.echo(f"provider failure: {exc}", err=True)
        sys.exit(3)

    if trace:
        click.echo(render_transcript(transcript), err=True)
    if transcript.terminated_reason == "provider_failure":
        click.echo("provider failure", err=True)
        sys.exit(3)
    if transcript.terminated_reason == "budget_exhausted":
        click.echo("budget exhausted without an answer", err=True)
        sys.exit(2)
    if as_json:
        click.echo(json.dumps({
            "answer": transcript.answer.text,
            "cited_evidence": list(transcript.answer.cited_evidence),
            "steps": len(transcript.steps),
        }, sort_keys=True))
    else:
        click.echo(transcript.answer.text)
    store.close()


@main.command()
@click.argument("subcommand")
@click.argument("args", nargs=-1)
@click.option("--store", "store_path", required=True)
@click.option("--json", "as_json", is_flag=True)
def inspect(subcommand, args, store_path, as_json):
    """Inspect a store: schema | entity <id> | history <entity> <property> | stats."""
    store = Store.open(store_path, create_if_missing=False)
    try:
        if subcommand == "schema":
            click.echo(schema_viewer().text)
        elif subcommand == "stats":
            counts = store.row_counts()
            if as_json:
                click.echo(json.dumps(counts, sort_keys=True))
            else:
                for table in sorted(counts):
                    click.echo(f"{table}: {counts[table]}")
        elif subcommand == "entity":
            from .tools import build_entity_document, render_entity_document

            raw = args[0]
            entity_id = int(raw.split(":")[-1])
            doc = build_entity_document(store, entity_id)
            if doc is None:
                click.echo(f"unknown entity: {raw}", err=True)
                sys.exit(1)
            click.echo(render_entity_document(doc))
        elif subcommand == "history":
            name, prop = args[0], args[1]
            row = store.find_entity_by_name(name)
            if row is None:
                click.echo(f"unknown entity: {name}", err=True)
                sys.exit(1)
            history = store.fact_history(row["entity_id"], prop)
            if as_json:
                click.echo(json.dumps([
                    {"value": str(f.value), "valid_from": f.valid_from,
                     "valid_to": f.valid_to, "created_at": f.created_at}
                    for f in history
                ]))
            else:
                for fact in history:
                    click.echo(
                        f"{fact.valid_from or '-'} .. {fact.valid_to or 'open'}: "
                        f"{fact.value}"
                    )
        else:
            click.echo(f"unknown subcommand: {subcommand}", err=True)
            sys.exit(1)
    finally:
        store.close()


@main.command("synth-eval")
@click.option("--seed", default=7, type=int)
@click.option("--n-sessions", default=20, type=int)
@click.option("--revisions", default=3, type=int)
@click.option("--mode", default="append_only",
              type=click.Choice(["append_only", "eager_update", "both"]))
@click.option("--json", "as_json", is_flag=True)
def synth_eval(seed, n_sessions, revisions, mode, as_json):
    """Score temporal-resolution accuracy on a generated corpus."""
    modes = ["append_only", "eager_update"] if mode == "both" else [mode]
    reports = [
        synth_mod.run_synth_eval(seed, n_sessions, revisions, mode=m) for m in modes
    ]
    if as_json:
        click.echo(json.dumps([
            {
                "mode": r.mode,
                "latest_accuracy": r.latest_accuracy,
                "before_accuracy": r.before_accuracy,
                "latest_total": r.latest_total,
                "before_total": r.before_total,
            }
            for r in reports
        ], sort_keys=True))
    else:
        for r in reports:
            click.echo(
                f"[{r.mode}] latest: {r.latest_correct}/{r.latest_total} "
                f"({r.latest_accuracy:.1%})  before-revision: "
                f"{r.before_correct}/{r.before_total} ({r.before_accuracy:.1%})"
            )


if __name__ == "__main__":
    main()
