"""Operator CLI: serve the HTTP gateway, ask one-shot questions, run the
evaluation corpus, and generate synthetic bundles."""

from __future__ import annotations

import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import click

from ..evalharness import (
    CORPUS_NOW,
    CORPUS_TZ,
    CorpusSpec,
    PipelineUnderTest,
    build_corpus,
    corpus_principal,
    load_corpus,
    run_eval,
    save_corpus,
)
from ..orchestrator import DEFAULT_TZ, InMemorySessionStore, Orchestrator
from ..planner.judge import OracleJudge
from ..planner.rule import RulePlanner
from ..store import AnalyticsStore, generate_dataset, load_dataset, save_dataset
from .config import load_config
from .service import create_app


@click.group()
def main() -> None:
    """Natural-language analytics over a governed query API."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="Service config JSON (see config.example.json).")
def serve(config_path: str) -> None:
    """Run the HTTP gateway."""
    import uvicorn

    config = load_config(config_path)
    app = create_app(config)
    uvicorn.run(app, host=config.listen_host, port=config.listen_port)


@main.command()
@click.argument("question")
@click.option("--bundle", required=True, type=click.Path(exists=True))
@click.option("--principal", "principal_ref", default="admin", show_default=True,
              help="One of admin, manager, analyst_masked, support_lead.")
@click.option("--now", "now_iso", default=None,
              help="Session clock as ISO-8601 (defaults to the corpus clock).")
@click.option("--tz", default=DEFAULT_TZ, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Print the full response JSON.")
def ask(question: str, bundle: str, principal_ref: str, now_iso: str | None,
        tz: str, as_json: bool) -> None:
    """Ask one question against a bundle and print the answer."""
    dataset = load_dataset(bundle)
    now = (
        datetime.fromisoformat(now_iso).astimezone(timezone.utc)
        if now_iso
        else CORPUS_NOW
    )
    orchestrator = Orchestrator(
        store=AnalyticsStore(dataset),
        planner=RulePlanner(),
        sessions=InMemorySessionStore(),
        clock=lambda: now,
        tz=tz,
    )
    principal = corpus_principal(principal_ref, dataset.org)
    session = orchestrator.sessions.get_or_create("cli", principal, tz=tz)
    session, response = orchestrator.handle_turn(session, question)
    if as_json:
        click.echo(json.dumps(response.to_json(), ensure_ascii=False, indent=2))
        return
    click.echo(f"[{response.status}] {response.text}")
    if response.table is not None:
        names = response.table.column_names
        click.echo(" | ".join(names))
        for row in response.table.rows[:20]:
            click.echo(" | ".join(str(v) for v in row))
        if len(response.table.rows) > 20:
            click.echo(f"... {len(response.table.rows) - 20} more rows")
    if response.clarification is not None:
        for i, candidate in enumerate(response.clarification["candidates"], start=1):
            click.echo(f"  {i}) {candidate['name']}")


@main.command("eval")
@click.option("--bundle", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", type=click.Path(exists=True),
              help="Corpus JSONL; defaults to building one in memory.")
@click.option("--cases", default=30, show_default=True, help="Size when building in memory.")
@click.option("--out", "out_path", type=click.Path(), help="Also write the report JSON here.")
def eval_cmd(bundle: str, corpus_path: str | None, cases: int, out_path: str | None) -> None:
    """Run the evaluation corpus with the rule backend and oracle judge."""
    dataset = load_dataset(bundle)
    if corpus_path:
        corpus = load_corpus(corpus_path, dataset)
    else:
        corpus = build_corpus(CorpusSpec(n_cases=cases), dataset)
    report = run_eval(corpus, PipelineUnderTest(dataset, now=CORPUS_NOW, tz=CORPUS_TZ),
                      [OracleJudge()])
    click.echo(report.render_text())
    if out_path:
        Path(out_path).write_text(json.dumps(report.to_json(), indent=2), "utf-8")
    if report.exec_success_rate < 100.0:
        sys.exit(1)


@main.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=7, show_default=True)
@click.option("--records", default=1000, show_default=True)
@click.option("--with-corpus", is_flag=True, help="Also write corpus.jsonl next to the bundle.")
def gen_data(out_dir: str, seed: int, records: int, with_corpus: bool) -> None:
    """Generate a deterministic synthetic bundle."""
    dataset = generate_dataset(seed, records)
    save_dataset(dataset, out_dir)
    click.echo(f"wrote {len(dataset.records)} records across {len(dataset.org)} targets to {out_dir}")
    if with_corpus:
        corpus = build_corpus(CorpusSpec(), dataset)
        save_corpus(corpus, Path(out_dir) / "corpus.jsonl")
        click.echo(f"wrote {len(corpus)} corpus cases")


if __name__ == "__main__":
    main()
