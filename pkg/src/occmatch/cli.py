"""Command line entry point: ``occmatch [global options] <stage>``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 provider error.
"""
from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
from filelock import FileLock, Timeout

from . import pipeline
from .config import ConfigError, RunConfig
from .consolidate import ConsolidationRules
from .embedding import BudgetTokenizerMismatch, ProviderUnavailable
from .ingest import FieldMap
from .matcher import MatchError
from .ontology import OntologyError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROVIDER = 0, 1, 2, 3

log = logging.getLogger("occmatch")


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _build_config(opts: dict) -> RunConfig:
    cfg = RunConfig.load(opts["config"]) if opts["config"] else RunConfig()
    for key in ("threshold", "top_k", "max_tokens", "provider", "out_dir", "rules"):
        if opts[key] is not None:
            setattr(cfg, key, opts[key])
    return cfg.validate()


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config", type=click.Path(dir_okay=False, path_type=Path), help="key = value config file")
@click.option("--threshold", type=float, help="cosine similarity cut-off (default 0.70, inclusive)")
@click.option("--top-k", "top_k", type=int, help="occupation groups per initiative (default 10)")
@click.option("--max-tokens", "max_tokens", type=int, help="input token budget (default 8192)")
@click.option("--provider", type=click.Choice(["local", "remote"]), help="embedding provider")
@click.option("--out-dir", "out_dir", type=click.Path(file_okay=False, path_type=Path), help="output directory")
@click.option("--rules", type=click.Path(dir_okay=False, path_type=Path), help="title consolidation rules file")
@click.option("-v", "--verbose", is_flag=True, help="log progress to stderr")
@click.pass_context
def main(ctx, verbose, **opts):
    """Match initiative definitions to job postings and populate the occupation ontology."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if ctx.invoked_subcommand == "init-drivers":
        return
    try:
        ctx.obj = _build_config(opts)
        if ctx.obj.rules and not ctx.obj.rules.is_file():
            raise ConfigError(f"rules file {ctx.obj.rules} not found")
        if ctx.obj.rules:
            ConsolidationRules.load(ctx.obj.rules)
        if ctx.obj.field_map:
            FieldMap.load(ctx.obj.field_map)
    except (ConfigError, ValueError, OSError) as exc:
        _fail(EXIT_USAGE, str(exc))


def _run(cfg: RunConfig, fn, *args, create_out: bool = True):
    """Run a stage under the output-directory lock, mapping errors to exit codes."""
    try:
        if create_out:
            cfg.out_dir.mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(cfg.out_dir / ".occmatch.lock"), timeout=0) if cfg.out_dir.is_dir() else None
        if lock is not None:
            lock.acquire()
        try:
            return fn(cfg, *args)
        finally:
            if lock is not None:
                lock.release()
    except Timeout:
        _fail(EXIT_USAGE, f"another occmatch run holds the lock on {cfg.out_dir}")
    except (ConfigError, MatchError) as exc:
        _fail(EXIT_USAGE, str(exc))
    except (ProviderUnavailable, BudgetTokenizerMismatch) as exc:
        _fail(EXIT_PROVIDER, str(exc))
    except (pipeline.DataError, OntologyError, ValueError, KeyError) as exc:
        _fail(EXIT_DATA, str(exc))
    except OSError as exc:
        _fail(EXIT_DATA, f"{exc.strerror or exc}: {exc.filename or ''}".strip())


@main.command("ingest")
@click.pass_obj
def ingest_cmd(cfg: RunConfig):
    """Parse, deduplicate and clean the posting dumps into corpus.jsonl."""
    missing = [str(p) for p in cfg.corpus_paths if not p.is_file()]
    if missing:
        _fail(EXIT_DATA, f"corpus input not found: {', '.join(missing)}")
    stats = _run(cfg, pipeline.run_ingest)
    click.echo(f"ingested {stats.raw_count} records: {stats.after_dedup_count} after dedup, "
               f"{stats.after_malformed_drop_count} clean postings")
    for reason, n in sorted(stats.drop_reasons.items()):
        click.echo(f"  dropped {n:>7}  {reason}", err=True)


@main.command("embed")
@click.pass_obj
def embed_cmd(cfg: RunConfig):
    """Embed corpus descriptions and driver definitions into the vector cache."""
    s = _run(cfg, pipeline.run_embed)
    click.echo(f"vectors: {s.posting_vectors}/{s.postings} postings, {s.driver_vectors}/{s.drivers} drivers "
               f"({s.provider_calls} provider calls, {s.cache_hits} cache hits)")
    for item, reason in sorted(s.failures.items()):
        verb = "skipped" if reason == pipeline.SKIP_REASON else "failed"
        click.echo(f"  {verb} {item}: {reason}", err=True)
    hard = s.hard_failures
    if hard and s.failure_fraction > cfg.max_failure_fraction:
        provider_down = any(r.startswith(("provider-unavailable", "ProviderUnavailable")) for r in hard.values())
        _fail(EXIT_PROVIDER if provider_down else EXIT_DATA,
              f"{len(hard)} items failed ({s.failure_fraction:.1%} > {cfg.max_failure_fraction:.1%})")


@main.command("match")
@click.pass_obj
def match_cmd(cfg: RunConfig):
    """Rank postings against every driver and write per-driver tables."""
    results = _run(cfg, pipeline.run_match, create_out=False)
    if not results:
        click.echo("no drivers configured; nothing to match")
        return
    for did, rs in results.items():
        click.echo(f"{did}: {len(rs)} matches")


@main.command("populate")
@click.option("--review", type=click.Path(dir_okay=False, path_type=Path), help="edited review file to commit")
@click.pass_obj
def populate_cmd(cfg: RunConfig, review):
    """Propose links for review, or commit accepted links to ontology.json."""
    out = _run(cfg, pipeline.run_populate, review)
    if out.review_written:
        click.echo(f"wrote {out.review_written}; mark rows accepted/rejected and rerun with --review")
    elif out.graph_written:
        click.echo(f"wrote {out.graph_written} ({len(out.graph.entities)} entities, {len(out.graph.edges)} edges)")
    else:
        click.echo("review file already edited; pass --review to commit it")


@main.command("report")
@click.pass_obj
def report_cmd(cfg: RunConfig):
    """Render top-k tables, histogram data and the score-distribution figure."""
    path = _run(cfg, pipeline.run_report)
    click.echo(path.read_text(encoding="utf-8"), nl=False)


@main.command("init-drivers")
@click.argument("directory", type=click.Path(file_okay=False, path_type=Path))
def init_drivers_cmd(directory: Path):
    """Write the ten bundled initiative templates (fill in definition texts)."""
    written = pipeline.write_driver_templates(directory)
    click.echo(f"wrote {len(written)} driver templates to {directory}")


if __name__ == "__main__":
    main()
