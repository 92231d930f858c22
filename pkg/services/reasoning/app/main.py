"""`kgr` command line.

Subcommands: preprocess, plan, sample-queries, train, eval, bench-sampler.
Errors raised on purpose by the library exit with status 1 and one line
`error: <ErrorClass>: <message>` on stderr; usage errors exit with status 2.
"""

import json
import sys
from pathlib import Path

import click
import numpy as np

from app.bench import CSV_COLUMNS, DEFAULT_TIMEOUT, bench_sampler, write_bench_csv
from app.errors import KGRError
from app.evaluation.metrics import ModelScorer, metrics
from app.evaluation.queries import Phase, build_eval_queries
from app.kg.store import MAGIC, KnowledgeGraph, load_splits, load_triples, read_image, write_image
from app.logging_utils import configure_logging, get_logger
from app.models.checkpoint import load_checkpoint
from app.models.kinds import ModelKind
from app.query.plan import annotate, cut_cost, optimal_cut, plan_table
from app.query.structure import resolve_structure
from app.query_io import read_eval_queries, write_eval_queries, write_sampled_queries
from app.sampler.grounding import exhaustive_answers, instantiate
from app.sampler.negatives import NegativeStrategy
from app.settings import EvalSettings, SamplerSettings, load_config
from app.training.pipeline import run

log = get_logger(__name__)

DELIMITER = click.Choice(["tab", "comma", "space"])


def load_graph(path: str | Path, delimiter: str = "tab") -> KnowledgeGraph:
    """Read a graph image when the file starts with the image magic, else a triple file."""
    with open(path, "rb") as f:
        head = f.read(len(MAGIC))
    if head == MAGIC:
        return read_image(path)
    return load_triples(path, delimiter)


def _summary(title: str, payload: dict) -> None:
    click.echo(title)
    click.echo(json.dumps(payload, indent=2, default=str))


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--log-level", default=None, help="Logging level (default: KGR_LOG_LEVEL or INFO).")
def cli(log_level: str | None) -> None:
    """Multi-hop knowledge-graph reasoning: sampling, training and evaluation."""
    configure_logging(log_level)


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--delimiter", type=DELIMITER, default="tab", show_default=True)
def preprocess(in_path: str, out_path: str, delimiter: str) -> None:
    """Convert a triple file into a binary graph image."""
    kg = load_triples(in_path, delimiter)
    write_image(kg, out_path)
    _summary(
        "PREPROCESS COMPLETE",
        {
            "image": out_path,
            "entities": kg.num_entities,
            "relations": kg.num_relations,
            "edges": kg.stats.edge_count,
            "max_out_degree": kg.stats.max_out_degree,
            "max_in_degree": kg.stats.max_in_degree,
        },
    )


@cli.command()
@click.option("--structure", required=True, help="Catalog name or structure expression.")
def plan(structure: str) -> None:
    """Print the u/s/o tables, the optimal cut and its cost exponent."""
    q = resolve_structure(structure)
    ann = annotate(q)
    cut = optimal_cut(q, ann)
    click.echo(plan_table(q, ann, cut).to_string(index=False))
    click.echo("cut {" + ", ".join(cut.labels(q)) + "}")
    click.echo(f"cost {cut_cost(q, cut)}")


@cli.command("sample-queries")
@click.option("--graph", type=click.Path(exists=True, dir_okay=False), help="Graph to sample on.")
@click.option(
    "--splits", nargs=3, type=click.Path(exists=True, dir_okay=False), default=None,
    help="TRAIN VALID TEST triple files; emits evaluation queries with three answer sets.",
)
@click.option("--structure", "structures", multiple=True, required=True)
@click.option("--count", type=click.IntRange(min=1), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--phase", type=click.Choice([p.value for p in Phase]), default="test", show_default=True)
@click.option("--delimiter", type=DELIMITER, default="tab", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def sample_queries(
    graph: str | None,
    splits: tuple[str, str, str] | None,
    structures: tuple[str, ...],
    count: int,
    seed: int,
    phase: str,
    delimiter: str,
    out_path: str,
) -> None:
    """Sample grounded queries with their answer sets."""
    qs = [resolve_structure(s) for s in structures]
    settings = SamplerSettings()
    if splits:
        graphs = load_splits(*splits, delimiter=delimiter)
        queries = build_eval_queries(graphs, qs, count, seed, phase, settings)
        write_eval_queries(out_path, queries)
    elif graph:
        kg = load_graph(graph, delimiter)
        rng = np.random.default_rng(seed)
        sampled = []
        for q in qs:
            for _ in range(count):
                gq = instantiate(q, kg, rng, settings)
                sampled.append((gq, exhaustive_answers(gq, kg, settings)))
        write_sampled_queries(out_path, sampled)
        queries = sampled
    else:
        raise click.UsageError("one of --graph or --splits is required")
    _summary("SAMPLING COMPLETE", {"queries": len(queries), "out": out_path})


@cli.command()
@click.option("--graph", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_kind", type=click.Choice([k.value for k in ModelKind]), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Checkpoint path.")
@click.option("--metrics", "metrics_path", type=click.Path(dir_okay=False), default=None)
@click.option("--steps", type=click.IntRange(min=1), default=None)
@click.option("--workers", type=click.IntRange(min=1), default=None)
@click.option("--delimiter", type=DELIMITER, default="tab", show_default=True)
def train(
    graph: str,
    model_kind: str | None,
    config_path: str | None,
    out_path: str,
    metrics_path: str | None,
    steps: int | None,
    workers: int | None,
    delimiter: str,
) -> None:
    """Train a model with online-sampled queries and write a checkpoint."""
    config = load_config(config_path, model=model_kind, steps=steps, workers=workers)
    kg = load_graph(graph, delimiter)
    result = run(config, kg, out_path, metrics_path or f"{out_path}.metrics.log")
    _summary(
        "TRAINING COMPLETE",
        {
            "checkpoint": out_path,
            "model": config.model.value,
            "steps": config.steps,
            "final_loss": result.losses[-1] if result.losses else None,
            "seconds": round(result.seconds, 3),
            "queries_per_second": round(result.queries_per_second, 1),
        },
    )


@cli.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--phase", type=click.Choice([p.value for p in Phase]), default="test", show_default=True)
@click.option("--negatives", type=click.IntRange(min=1), default=None)
@click.option("--workers", type=click.IntRange(min=1), default=None)
@click.option("--seed", type=int, default=None)
def evaluate(
    checkpoint: str,
    queries_path: str,
    phase: str,
    negatives: int | None,
    workers: int | None,
    seed: int | None,
) -> None:
    """Filtered MRR / Hit@k of a checkpoint on an evaluation query file."""
    ckpt = load_checkpoint(checkpoint)
    overrides = {"negatives": negatives, "workers": workers, "seed": seed}
    settings = EvalSettings(**{k: v for k, v in overrides.items() if v is not None})
    queries = read_eval_queries(queries_path)
    report = metrics(
        queries, ModelScorer(ckpt.model, ckpt.entities, ckpt.relations), phase,
        settings.hits_at, settings,
    )
    click.echo(report.render())
    for line in report.to_key_values():
        click.echo(line)


@cli.command("bench-sampler")
@click.option("--structure", "structures", multiple=True, default=("2p", "ip"), show_default=True)
@click.option("--C", "branchings", multiple=True, type=click.IntRange(min=1), default=(4, 8, 16, 32), show_default=True)
@click.option("--entities", type=click.IntRange(min=2), default=5000, show_default=True)
@click.option("--relations", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--sampler", "samplers", multiple=True, type=click.Choice([s.value for s in NegativeStrategy]), default=tuple(s.value for s in NegativeStrategy))
@click.option("--batch-size", type=click.IntRange(min=1), default=1024, show_default=True)
@click.option("--negatives", type=click.IntRange(min=1), default=32, show_default=True)
@click.option("--repeats", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--timeout", type=float, default=DEFAULT_TIMEOUT, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def bench_sampler_cmd(
    structures: tuple[str, ...],
    branchings: tuple[int, ...],
    entities: int,
    relations: int,
    samplers: tuple[str, ...],
    batch_size: int,
    negatives: int,
    repeats: int,
    timeout: float,
    seed: int,
    out_path: str,
) -> None:
    """Time batch sampling per structure, branching factor and sampler; append to a CSV."""
    records = bench_sampler(
        [resolve_structure(s) for s in structures],
        list(branchings),
        num_entities=entities,
        num_relations=relations,
        seed=seed,
        timeout=timeout,
        samplers=tuple(NegativeStrategy(s) for s in samplers),
        batch_size=batch_size,
        negatives=negatives,
        repeats=repeats,
    )
    write_bench_csv(records, out_path)
    _summary("BENCH COMPLETE", {"records": len(records), "out": out_path, "columns": CSV_COLUMNS})


def run_cli(argv: list[str] | None = None) -> int:
    """Run the CLI and return its exit status instead of exiting."""
    try:
        rv = cli.main(args=argv, prog_name="kgr", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo("error: Aborted: interrupted", err=True)
        return 1
    except KGRError as e:
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        return 1
    except OSError as e:
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        return 1
    return rv if isinstance(rv, int) else 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
