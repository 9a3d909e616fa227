"""Command-line entry points.

Workspace layout (override the root with --data-dir or WHVCANVAS_DATA_DIR):
    <data>/graphs/<pillar>/   frozen prototype graph per pillar
    <data>/models/<pillar>/   trained link model per pillar
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from pathlib import Path

import click

from .canvas import EventKind, InteractionEvent, load_snapshot
from .core import IdeaNode, LinkKind, ParentLink, normalize_pillar
from .embedding import HashingEmbedder, embedder_from_env
from .errors import WhvError
from .linkmodel import (
    TrainConfig,
    evaluate,
    load_model,
    predict_topk,
    save_model,
    train,
)
from .metrics import metrics_report
from .protograph import (
    build_graph,
    dedup_filter,
    expand_corpus,
    find_anchor,
    load_graph,
    load_seeds,
    normalize_shift,
    save_graph,
)

_PILLARS = click.Choice(["what", "how", "value"])


def _data_dir(override) -> Path:
    return Path(override or os.environ.get("WHVCANVAS_DATA_DIR", "whv-data"))


def _graph_dir(data_dir, pillar) -> Path:
    return _data_dir(data_dir) / "graphs" / pillar


def _model_dir(data_dir, pillar) -> Path:
    return _data_dir(data_dir) / "models" / pillar


def _load_graph_or_fail(data_dir, pillar):
    directory = _graph_dir(data_dir, pillar)
    if not (directory / "manifest.json").exists():
        raise click.ClickException(
            f"no graph for pillar {pillar!r} under {directory} "
            f"(run `graph build` first)")
    return load_graph(str(directory))


def _graph_data_hash(directory: Path) -> str:
    digest = hashlib.sha256()
    for name in ("nodes.jsonl", "edges.jsonl"):
        digest.update((directory / name).read_bytes())
    return digest.hexdigest()


def _echo_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out and out != "-":
        Path(out).write_text(text + "\n", encoding="utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


class _DomainErrorGroup(click.Group):
    """Turn domain errors into exit-code-1 messages instead of tracebacks."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except WhvError as exc:
            raise click.ClickException(f"[{exc.code}] {exc.detail}") from None


@click.group(cls=_DomainErrorGroup)
def main():
    """Idea-canvas toolbox: prototype graphs, link models, metrics, server."""


# -- graph ---------------------------------------------------------------------


@main.group()
def graph():
    """Build and inspect per-pillar prototype graphs."""


@graph.command("build")
@click.option("--pillar", type=_PILLARS, required=True)
@click.option("--seeds", "seeds_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="TSV: pillar, level, source, shift, target.")
@click.option("--expand", "expand_to", type=int, default=0,
              help="Grow the corpus to N samples with the configured LLM backend.")
@click.option("--data-dir", default=None)
def graph_build(pillar, seeds_path, expand_to, data_dir):
    """Filter the seed corpus and freeze it into a prototype graph."""
    pillar_enum = normalize_pillar(pillar)
    samples = [s for s in load_seeds(seeds_path) if s.pillar is pillar_enum]
    if expand_to > len(samples):
        from .llm.gateway import backend_from_env
        backend = backend_from_env()
        samples = samples + expand_corpus(
            pillar_enum, samples, expand_to - len(samples), backend)
    embedder = embedder_from_env()
    kept, report = dedup_filter(samples, embedder=embedder)
    built = build_graph(kept, pillar_enum, embedder=embedder)
    directory = _graph_dir(data_dir, pillar)
    save_graph(built, str(directory), report=report)
    click.echo(
        f"{pillar}: {built.node_count} nodes, {built.edge_count} edges "
        f"-> {directory}")
    click.echo(f"filter: {json.dumps(report.to_record())}")


@graph.command("stats")
@click.option("--pillar", type=_PILLARS, default=None,
              help="One pillar; default reports every built pillar.")
@click.option("--data-dir", default=None)
def graph_stats(pillar, data_dir):
    """Node, edge, and shift-type counts for stored graphs."""
    pillars = [pillar] if pillar else ["what", "how", "value"]
    found = False
    for name in pillars:
        directory = _graph_dir(data_dir, name)
        if not (directory / "manifest.json").exists():
            continue
        found = True
        g = load_graph(str(directory))
        by_shift: dict[str, int] = {}
        for _s, shift, _t, _level in g.edges:
            by_shift[shift.value] = by_shift.get(shift.value, 0) + 1
        click.echo(
            f"{name}: {g.node_count} nodes, {g.edge_count} edges, "
            f"dim {g.dim}, shifts {json.dumps(by_shift, sort_keys=True)}")
    if not found:
        raise click.ClickException("no graphs found (run `graph build` first)")


@graph.command("export")
@click.option("--pillar", type=_PILLARS, required=True)
@click.option("--format", "fmt", type=click.Choice(["edgelist"]), default="edgelist")
@click.option("--out", default="-", help="Output path, or - for stdout.")
@click.option("--data-dir", default=None)
def graph_export(pillar, fmt, out, data_dir):
    """Dump edges as tab-separated `src shift dst level` rows."""
    g = _load_graph_or_fail(data_dir, pillar)
    lines = [f"{s}\t{shift.value}\t{t}\t{level}" for s, shift, t, level in g.edges]
    body = "\n".join(lines) + ("\n" if lines else "")
    if out == "-":
        sys.stdout.write(body)
    else:
        Path(out).write_text(body, encoding="utf-8")
        click.echo(f"wrote {len(lines)} edges to {out}")


# -- model ---------------------------------------------------------------------


@main.group()
def model():
    """Train and query per-pillar link-prediction models."""


@model.command("train")
@click.option("--pillar", type=_PILLARS, required=True)
@click.option("--epochs", type=int, default=60, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--hidden", type=int, default=128, show_default=True,
              help="Width of both message-passing layers.")
@click.option("--data-dir", default=None)
def model_train(pillar, epochs, lr, seed, hidden, data_dir):
    """Train on the stored graph and persist tensors plus a manifest."""
    g = _load_graph_or_fail(data_dir, pillar)
    config = TrainConfig(epochs=epochs, learning_rate=lr, seed=seed)
    trained, report = train(g, config, dims=(g.dim, hidden, hidden))
    directory = _model_dir(data_dir, pillar)
    save_model(trained, str(directory), config=config,
               data_hash=_graph_data_hash(_graph_dir(data_dir, pillar)))
    first = report.epoch_losses[0] if report.epoch_losses else float("nan")
    last = report.epoch_losses[-1] if report.epoch_losses else float("nan")
    click.echo(
        f"{pillar}: loss {first:.4f} -> {last:.4f} over {epochs} epochs, "
        f"mrr {report.mrr:.4f} (random {report.random_mrr:.4f}), "
        f"{report.wall_time:.1f}s -> {directory}")


@model.command("eval")
@click.option("--pillar", type=_PILLARS, required=True)
@click.option("--data-dir", default=None)
@click.option("--out", default="-")
def model_eval(pillar, data_dir, out):
    """Rank the held-out edges recorded at training time."""
    g = _load_graph_or_fail(data_dir, pillar)
    directory = _model_dir(data_dir, pillar)
    if not (directory / "model.json").exists():
        raise click.ClickException(
            f"no model for pillar {pillar!r} under {directory} "
            f"(run `model train` first)")
    trained = load_model(str(directory))
    manifest = json.loads((directory / "model.json").read_text(encoding="utf-8"))
    config = manifest.get("config", {})
    stored_hash = manifest.get("data_hash", "")
    current_hash = _graph_data_hash(_graph_dir(data_dir, pillar))
    if stored_hash and stored_hash != current_hash:
        click.echo("warning: graph changed since training; split is not the "
                   "original hold-out", err=True)
    result = evaluate(
        trained, g,
        seed=int(config.get("seed", 0)),
        eval_fraction=float(config.get("eval_fraction", 0.10)),
    )
    _echo_json(dict(result, pillar=pillar), out)


@model.command("topk")
@click.option("--pillar", type=_PILLARS, required=True)
@click.option("--anchor", required=True, help="Free text; snapped to the nearest graph node.")
@click.option("--shift", required=True,
              help="enable | imply | support | derived-from")
@click.option("-k", type=int, default=5, show_default=True)
@click.option("--level", type=int, default=None,
              help="Keep only targets seen at this abstraction level.")
@click.option("--data-dir", default=None)
def model_topk(pillar, anchor, shift, k, level, data_dir):
    """Top-k prototype targets for an anchored text and shift type."""
    g = _load_graph_or_fail(data_dir, pillar)
    directory = _model_dir(data_dir, pillar)
    if not (directory / "model.json").exists():
        raise click.ClickException(
            f"no model for pillar {pillar!r} (run `model train` first)")
    trained = load_model(str(directory))
    shift_enum = normalize_shift(shift)
    embedder = embedder_from_env()
    anchored = find_anchor(anchor, g, embedder=embedder)
    if anchored is None:
        raise click.ClickException(
            "anchor text is not similar enough to any graph node")
    anchor_id, similarity = anchored
    rows = predict_topk(trained, g, anchor_id, shift_enum, k, level_filter=level)
    click.echo(f"anchor [{anchor_id}] (cos {similarity:.3f}): {g.text_of(anchor_id)}")
    for node_id, score in rows:
        click.echo(f"{score:+.4f}  [{node_id}] {g.text_of(node_id)}")


# -- metrics ---------------------------------------------------------------------


def _nodes_from_log(events) -> dict[str, IdeaNode]:
    """Skeleton nodes recovered from the log when no snapshot sits beside it.

    Lineage events name the created node last in ``subjects``; texts beyond
    the create-event title are unrecoverable and stay empty.
    """
    link_kind = {
        EventKind.DRAGOUT: LinkKind.DRAGOUT,
        EventKind.MERGE: LinkKind.MERGE,
        EventKind.STEER: LinkKind.STEER,
    }
    nodes: dict[str, IdeaNode] = {}
    for event in events:
        if event.kind is EventKind.CREATE:
            node_id = event.subjects[0]
            nodes[node_id] = IdeaNode(
                id=node_id, title=str(event.payload.get("title", node_id)),
                content="", created_at=event.seq)
        elif event.kind in link_kind:
            child = event.subjects[-1]
            nodes[child] = IdeaNode(
                id=child, title=child, content="", created_at=event.seq,
                parent_links=[ParentLink(p, link_kind[event.kind])
                              for p in event.subjects[:-1]])
    return nodes


@main.command("metrics")
@click.option("--log", "log_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="events.jsonl written by a snapshot.")
@click.option("--prompt", "prompt_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Adds Coverage and Coherence-to-Prompt.")
@click.option("--out", default="-", help="Report path, or - for stdout.")
@click.option("--threshold", type=float, default=0.35, show_default=True,
              help="Coverage cosine threshold.")
def metrics_command(log_path, prompt_path, out, threshold):
    """Structural exploration metrics from an interaction log.

    When canvas.json sits beside the log the full node texts are used;
    otherwise nodes are reconstructed from the log alone.
    """
    log_path = Path(log_path)
    events = [
        InteractionEvent.from_record(json.loads(line))
        for line in log_path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    snapshot_path = log_path.parent / "canvas.json"
    if snapshot_path.exists():
        canvas = load_snapshot(log_path.parent, embedder=embedder_from_env())
        nodes = canvas.nodes
    else:
        nodes = _nodes_from_log(events)
    prompt = None
    if prompt_path:
        prompt = Path(prompt_path).read_text(encoding="utf-8")
    report = metrics_report(
        nodes, events, prompt=prompt, threshold=threshold,
        embedder=embedder_from_env())
    _echo_json(report, out)


# -- serve ---------------------------------------------------------------------


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8714, show_default=True)
@click.option("--cases", type=click.Path(exists=True, file_okay=False),
              default=None, help="Directory of .txt case studies for related-node lookups.")
def serve(host, port, cases):
    """Run the HTTP service (WHVCANVAS_BACKEND selects mock or remote)."""
    import uvicorn

    from .service import create_app

    app = create_app(case_dir=cases)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
