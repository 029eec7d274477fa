"""Pipeline stages over one output directory.

Layout under ``out_dir``::

    corpus.jsonl, corpus_stats.json          ingest
    cache/vectors.occv, embed_report.json    embed
    matches/drivers.json                     match: per-driver summary + run id
    matches/<driver>.matches.jsonl           every match >= threshold
    matches/<driver>.groups.json             consolidated occupation groups
    matches/<driver>.top.csv                 top-k groups: rank, title, count, best score
    matches/<driver>.histogram.csv           score histogram (bin, count)
    matches/<driver>.flags.jsonl             matches whose title shares no query word
    review.csv                               populate, first pass
    ontology.json                            populate, after review
    report/                                  report: summary.txt, top.csv, histogram.csv, score_distribution.png

Every file is written to a temporary name and renamed into place, and no
file carries timestamps, so reruns reproduce outputs byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from datetime import date
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import consolidate as cons
from . import ingest
from .config import ConfigError, RunConfig
from .embedding import (
    EmbeddingProvider,
    ProviderUnavailable,
    TokenBudget,
    embed_corpus,
    lookup,
    make_provider,
    provider_tag_for,
)
from .matcher import MatchResult, ProviderMismatch, VectorIndex, match_all_drivers, vocabulary_flags
from .ontology import (
    DemandDriver,
    DriverKind,
    EntityKind,
    IndustryTitle,
    OntologyGraph,
    OrganisationWorkforce,
    Provenance,
    Relation,
    Skill,
    WorkforceSegment,
    slugify,
)
from .vector_cache import VectorCache

log = logging.getLogger(__name__)

BIN_WIDTH = 0.01
REVIEW_FIELDS = ("driver_id", "driver_name", "segment", "canonical_title", "best_score", "distinct_count",
                 "status", "note")
REVIEW_STATUSES = ("proposed", "accepted", "rejected")


SKIP_REASON = "empty-input"


class DataError(Exception):
    """Input data is missing, malformed or inconsistent (exit code 2)."""


# ---------------------------------------------------------------------------
# file helpers


def atomic_write(path: Path, data: bytes | str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _paths(cfg: RunConfig) -> Dict[str, Path]:
    out = cfg.out_dir
    return {
        "corpus": out / "corpus.jsonl",
        "stats": out / "corpus_stats.json",
        "cache": out / "cache" / "vectors.occv",
        "embed_report": out / "embed_report.json",
        "matches": out / "matches",
        "drivers": out / "matches" / "drivers.json",
        "review": out / "review.csv",
        "ontology": out / "ontology.json",
        "report": out / "report",
    }


# ---------------------------------------------------------------------------
# drivers


@dataclass(frozen=True)
class DriverSpec:
    driver_id: str
    name: str
    definition_text: str

    @property
    def query_text(self) -> str:
        return ingest.normalize_text(self.definition_text)


def load_drivers(directory: Optional[Path]) -> List[DriverSpec]:
    """One ``<Driver Name>.txt`` per driver; sorted by driver id."""
    if directory is None:
        return []
    if not directory.is_dir():
        raise ConfigError(f"drivers_dir {directory} is not a directory")
    specs = {}
    for p in sorted(directory.glob("*.txt")):
        name = p.stem.strip()
        did = slugify(name)
        if did in specs:
            raise ConfigError(f"driver files {specs[did].name!r} and {name!r} share id {did!r}")
        specs[did] = DriverSpec(did, name, p.read_text(encoding="utf-8").strip())
    return [specs[k] for k in sorted(specs)]


def bundled_driver_names() -> List[str]:
    root = resources.files("occmatch") / "data" / "drivers"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".txt"))


def write_driver_templates(directory: Path) -> List[Path]:
    """Copy the ten bundled initiative templates; existing files are left alone."""
    directory.mkdir(parents=True, exist_ok=True)
    root = resources.files("occmatch") / "data" / "drivers"
    written = []
    for name in bundled_driver_names():
        dest = directory / f"{name}.txt"
        if not dest.exists():
            dest.write_text((root / f"{name}.txt").read_text(encoding="utf-8"), encoding="utf-8")
            written.append(dest)
    return written


def make_budget(cfg: RunConfig) -> TokenBudget:
    return TokenBudget(cfg.max_tokens)


# ---------------------------------------------------------------------------
# ingest


def run_ingest(cfg: RunConfig) -> ingest.CorpusStats:
    if not cfg.corpus_paths:
        raise ConfigError("no corpus paths configured")
    missing = [str(p) for p in cfg.corpus_paths if not p.is_file()]
    if missing:
        raise DataError(f"corpus input not found: {', '.join(missing)}")
    fmap = ingest.FieldMap.load(cfg.field_map) if cfg.field_map else ingest.FieldMap()
    flt = ingest.PostingFilter(
        tuple(cfg.filter_locations),
        date.fromisoformat(cfg.date_from) if cfg.date_from else None,
        date.fromisoformat(cfg.date_to) if cfg.date_to else None,
    )
    formats = [cfg.corpus_format or ingest.infer_format(p) for p in cfg.corpus_paths]
    paths = _paths(cfg)
    builder = ingest.CorpusBuilder()
    filtered = 0
    paths["corpus"].parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=paths["corpus"].parent, prefix=".corpus.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as out:
            for path, fmt in zip(cfg.corpus_paths, formats):
                with open(path, "rb") as fh:
                    for item in ingest.iter_posting_stream(fh, fmt, fmap):
                        if flt.active and isinstance(item, ingest.RawPostingRecord) and not flt.accepts(item):
                            filtered += 1
                            continue
                        posting = builder.feed(item)
                        if posting is not None:
                            out.write(ingest.write_corpus_line(posting))
        stats = builder.stats
        doc = stats.to_json()
        if flt.active:
            doc["filtered_count"] = filtered
        atomic_write(paths["stats"], dump_json(doc))
        os.replace(tmp, paths["corpus"])
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return stats


def _load_corpus(cfg: RunConfig) -> List[ingest.CleanPosting]:
    p = _paths(cfg)["corpus"]
    if not p.is_file():
        raise DataError(f"{p} not found; run the ingest stage first")
    return ingest.read_corpus(p)


# ---------------------------------------------------------------------------
# embed


@dataclass
class EmbedSummary:
    postings: int
    posting_vectors: int
    drivers: int
    driver_vectors: int
    failures: Dict[str, str]
    provider_calls: int
    cache_hits: int

    @property
    def hard_failures(self) -> Dict[str, str]:
        """Failures other than empty inputs, which are skipped rather than failed."""
        return {k: v for k, v in self.failures.items() if v != SKIP_REASON}

    @property
    def failure_fraction(self) -> float:
        total = self.postings + self.drivers
        return len(self.hard_failures) / total if total else 0.0


def run_embed(cfg: RunConfig, provider: EmbeddingProvider | None = None) -> EmbedSummary:
    postings = _load_corpus(cfg)
    drivers = load_drivers(cfg.drivers_dir)
    provider = provider or make_provider(cfg.provider, cfg.dimension, cfg.max_tokens, cfg.endpoint, cfg.model)
    budget = make_budget(cfg)
    paths = _paths(cfg)
    with VectorCache(paths["cache"]) as cache:
        items = [(p.posting_id, p.description) for p in postings]
        items += [(f"driver:{d.driver_id}", d.query_text) for d in drivers]
        res = embed_corpus(items, provider, budget, cache, cfg.parallelism, cfg.batch_size)
    driver_vecs = sum(1 for k in res.vectors if k.startswith("driver:"))
    report = {
        "provider_tag": provider.provider_tag,
        "dimension": provider.dimension,
        "max_tokens": budget.max_tokens,
        "postings": len(postings),
        "posting_vectors": len(res.vectors) - driver_vecs,
        "drivers": len(drivers),
        "driver_vectors": driver_vecs,
        "failures": dict(sorted(res.failures.items())),
    }
    atomic_write(paths["embed_report"], dump_json(report))
    log.info("embedded %d items (%d provider calls, %d cache hits, %d failures)",
             len(res.vectors), res.provider_calls, res.cache_hits, len(res.failures))
    return EmbedSummary(len(postings), len(res.vectors) - driver_vecs, len(drivers), driver_vecs,
                        res.failures, res.provider_calls, res.cache_hits)


# ---------------------------------------------------------------------------
# match


def _clear_dir(d: Path) -> None:
    if d.is_dir():
        for p in d.iterdir():
            if p.is_file():
                p.unlink()


def build_index(cfg: RunConfig, postings: Sequence[ingest.CleanPosting], cache: VectorCache) -> VectorIndex:
    import numpy as np

    tag = provider_tag_for(cfg.provider, cfg.dimension, cfg.model)
    budget = make_budget(cfg)
    ids, rows, titles = [], [], {}
    for p in postings:
        v = lookup(p.description, tag, budget, cache)
        if v is None:
            continue
        if v.dimension != cfg.dimension:
            raise ProviderMismatch(f"cached vector dimension {v.dimension} != configured {cfg.dimension}")
        ids.append(p.posting_id)
        rows.append(v.values)
        titles[p.posting_id] = p.title
    if not ids:
        return VectorIndex({}, provider_tag=tag)
    return VectorIndex.from_arrays(ids, np.stack(rows), tag, titles)


def run_match(cfg: RunConfig) -> Dict[str, List[MatchResult]]:
    drivers = load_drivers(cfg.drivers_dir)
    paths = _paths(cfg)
    if not drivers:
        return {}
    postings = _load_corpus(cfg)
    if not paths["cache"].is_file():
        raise DataError(f"{paths['cache']} not found; run the embed stage first")
    rules = cons.ConsolidationRules.load(cfg.rules) if cfg.rules else cons.DEFAULT_RULES
    tag = provider_tag_for(cfg.provider, cfg.dimension, cfg.model)
    if paths["embed_report"].is_file():
        embedded = json.loads(paths["embed_report"].read_text(encoding="utf-8")).get("provider_tag")
        if embedded != tag:
            raise ProviderMismatch(f"cache was embedded with {embedded}, run configured for {tag}")
    budget = make_budget(cfg)
    with VectorCache(paths["cache"]) as cache:
        index = build_index(cfg, postings, cache)
        queries = {}
        for d in drivers:
            if d.query_text:
                q = lookup(d.query_text, tag, budget, cache)
                if q is not None:
                    queries[d.driver_id] = q
    if not len(index):
        raise DataError("no posting vectors in cache for the configured provider; run the embed stage first")
    by_id = {p.posting_id: p for p in postings}
    matched = match_all_drivers(
        [d.driver_id for d in drivers], queries, index, cfg.threshold, None, cfg.driver_thresholds
    )
    mdir = paths["matches"]
    _clear_dir(mdir)
    summary = []
    digest = hashlib.sha256()
    for d in drivers:
        results = matched.results.get(d.driver_id, [])
        groups = cons.consolidate(results, by_id, rules)
        top = cons.top_n(groups, cfg.top_k)
        hist = cons.frequency_distribution(results, BIN_WIDTH)
        flags = vocabulary_flags(results, d.query_text)
        lines = "".join(r.to_json_line() for r in results)
        digest.update(d.driver_id.encode() + b"\0" + lines.encode("utf-8"))
        atomic_write(mdir / f"{d.driver_id}.matches.jsonl", lines)
        atomic_write(mdir / f"{d.driver_id}.groups.json", dump_json([g.to_json() for g in groups]))
        atomic_write(mdir / f"{d.driver_id}.top.csv", cons.top_table_csv(top))
        atomic_write(mdir / f"{d.driver_id}.histogram.csv", cons.histogram_csv(hist, BIN_WIDTH))
        atomic_write(mdir / f"{d.driver_id}.flags.jsonl", "".join(r.to_json_line() for r in flags))
        summary.append({
            "driver_id": d.driver_id,
            "name": d.name,
            "definition_text": d.definition_text,
            "threshold": cfg.threshold_for(d.driver_id),
            "match_count": len(results),
            "group_count": len(groups),
            "flagged_count": len(flags),
            "error": matched.failures.get(d.driver_id),
        })
    run_id = cfg.run_id or digest.hexdigest()[:8]
    doc = {"run_id": run_id, "provider_tag": tag, "top_k": cfg.top_k, "bin_width": BIN_WIDTH,
           "drivers": summary}
    atomic_write(paths["drivers"], dump_json(doc))
    return {d.driver_id: matched.results.get(d.driver_id, []) for d in drivers}


def _load_match_summary(cfg: RunConfig) -> Dict:
    p = _paths(cfg)["drivers"]
    if not p.is_file():
        raise DataError(f"{p} not found; run the match stage first")
    return json.loads(p.read_text(encoding="utf-8"))


def load_groups(cfg: RunConfig, driver_id: str) -> List[cons.OccupationGroup]:
    p = _paths(cfg)["matches"] / f"{driver_id}.groups.json"
    if not p.is_file():
        raise DataError(f"{p} not found")
    return [cons.OccupationGroup.from_json(o) for o in json.loads(p.read_text(encoding="utf-8"))]


# ---------------------------------------------------------------------------
# populate


def segment_name(driver_name: str, run_id: str) -> str:
    return f"{driver_name} matched cohort {run_id}"


def proposed_review(cfg: RunConfig) -> str:
    meta = _load_match_summary(cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REVIEW_FIELDS)
    for d in meta["drivers"]:
        seg = segment_name(d["name"], meta["run_id"])
        for g in cons.top_n(load_groups(cfg, d["driver_id"]), meta["top_k"]):
            w.writerow([d["driver_id"], d["name"], seg, g.canonical_title, f"{g.best_score:.8f}",
                        g.distinct_count, "proposed", ""])
    return buf.getvalue()


def read_review(text: str) -> List[Dict[str, str]]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not {"driver_id", "canonical_title", "status"} <= set(reader.fieldnames):
        raise DataError("review file needs driver_id, canonical_title and status columns")
    rows = []
    for n, row in enumerate(reader, 2):
        status = (row.get("status") or "").strip().lower()
        if status not in REVIEW_STATUSES:
            raise DataError(f"review line {n}: status must be one of {REVIEW_STATUSES}, got {row.get('status')!r}")
        row["status"] = status
        row["_line"] = str(n)
        rows.append(row)
    return rows


def read_skills(path: Path) -> List[Tuple[str, str]]:
    pairs = []
    for n, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=>" not in line:
            raise DataError(f"{path}:{n}: expected 'Industry Title => Skill'")
        t, s = (x.strip() for x in line.split("=>", 1))
        pairs.append((t, s))
    return pairs


def build_graph(cfg: RunConfig, review_rows: Sequence[Dict[str, str]]) -> OntologyGraph:
    meta = _load_match_summary(cfg)
    drivers = {d["driver_id"]: d for d in meta["drivers"]}
    groups = {did: {g.canonical_title: g for g in load_groups(cfg, did)} for did in drivers}
    accepted: Dict[str, List[str]] = {}
    for row in review_rows:
        did, title = row["driver_id"].strip(), row["canonical_title"].strip()
        if did not in drivers:
            raise DataError(f"review line {row['_line']}: unknown driver {did!r}")
        if title not in groups[did]:
            raise DataError(f"review line {row['_line']}: {title!r} is not a matched occupation group of {did!r}")
        if row["status"] == "accepted" and title not in accepted.setdefault(did, []):
            accepted[did].append(title)

    g = OntologyGraph.deserialize(cfg.base_graph.read_bytes()) if cfg.base_graph else OntologyGraph()
    workforce = None
    if cfg.organisation:
        wid = g.new_id(EntityKind.WORKFORCE, cfg.organisation)
        existing = g.find(EntityKind.WORKFORCE, cfg.organisation)
        workforce = existing or OrganisationWorkforce(wid, cfg.organisation)
        g.add_entity(workforce)

    # one IndustryTitle per canonical name, aliases pooled over all drivers
    aliases: Dict[str, set] = {}
    for did in sorted(accepted):
        for title in accepted[did]:
            aliases.setdefault(title, set()).update(groups[did][title].member_titles)
    title_ids = {}
    for title in sorted(aliases):
        existing = g.find(EntityKind.INDUSTRY_TITLE, title)
        if existing is not None:
            title_ids[title] = existing.id
            continue
        ent = IndustryTitle(g.new_id(EntityKind.INDUSTRY_TITLE, title), title, frozenset(aliases[title]))
        g.add_entity(ent)
        title_ids[title] = ent.id

    for did in sorted(drivers):
        d = drivers[did]
        driver = DemandDriver(
            g.new_id(EntityKind.DRIVER, d["name"]) if g.find(EntityKind.DRIVER, d["name"]) is None
            else g.find(EntityKind.DRIVER, d["name"]).id,
            d["name"],
            DriverKind.TRANSFORMATION,
            d["definition_text"],
            {"definition_text": Provenance.MANUAL, "segments": Provenance.MATCHED},
        )
        g.add_entity(driver)
        if not accepted.get(did):
            continue
        seg_name = segment_name(d["name"], meta["run_id"])
        seg = WorkforceSegment(g.new_id(EntityKind.SEGMENT, seg_name), seg_name,
                               {"driver": d["name"], "run_id": meta["run_id"]})
        g.add_entity(seg)
        g.add_edge(driver.id, Relation.DRIVES, seg.id)
        if workforce is not None:
            g.add_edge(workforce.id, Relation.HAS_SEGMENT, seg.id)
        for title in accepted[did]:
            g.add_edge(seg.id, Relation.MAPS_TO, title_ids[title])

    if cfg.skills_file:
        for tname, sname in read_skills(cfg.skills_file):
            t = g.find(EntityKind.INDUSTRY_TITLE, tname)
            if t is None:
                raise DataError(f"skills file names unknown industry title {tname!r}")
            s = g.find(EntityKind.SKILL, sname) or Skill(g.new_id(EntityKind.SKILL, sname), sname)
            g.add_entity(s)
            g.add_edge(t.id, Relation.REQUIRES, s.id)
    return g


@dataclass
class PopulateOutcome:
    review_written: Optional[Path] = None
    graph_written: Optional[Path] = None
    graph: Optional[OntologyGraph] = None


def run_populate(cfg: RunConfig, review: Optional[Path] = None) -> PopulateOutcome:
    paths = _paths(cfg)
    if review is None:
        text = proposed_review(cfg)
        if paths["review"].exists() and paths["review"].read_text(encoding="utf-8") != text:
            log.warning("%s exists and has edits; leaving it alone (pass --review to commit)", paths["review"])
            return PopulateOutcome()
        atomic_write(paths["review"], text)
        return PopulateOutcome(review_written=paths["review"])
    if not review.is_file():
        raise DataError(f"review file {review} not found")
    rows = read_review(review.read_text(encoding="utf-8"))
    graph = build_graph(cfg, rows)
    violations = graph.validate()
    if violations:
        detail = "; ".join(f"{v.rule} {v.subject}" for v in violations[:5])
        raise DataError(f"graph failed validation ({len(violations)} violations): {detail}")
    data = graph.serialize()
    if OntologyGraph.deserialize(data) != graph:
        raise DataError("graph did not survive a serialization round trip")
    atomic_write(paths["ontology"], data)
    return PopulateOutcome(graph_written=paths["ontology"], graph=graph)


# ---------------------------------------------------------------------------
# report


def render_summary(meta: Dict, tables: Dict[str, List[Dict[str, str]]]) -> str:
    lines = ["Occupation groups matched to transformation initiatives", ""]
    lines.append(f"run {meta['run_id']}, provider {meta['provider_tag']}, top {meta['top_k']} groups per initiative")
    for d in meta["drivers"]:
        rows = tables[d["driver_id"]]
        lines += ["", f"{d['name']} (threshold {d['threshold']:.2f}, {d['match_count']} matched postings, "
                      f"{d['group_count']} groups)"]
        if d.get("error"):
            lines.append(f"  error: {d['error']}")
        if not rows:
            lines.append("  no results")
            continue
        width = max(len("occupation group"), *(len(r["canonical_title"]) for r in rows))
        lines.append(f"  {'rank':>4}  {'occupation group':<{width}}  {'postings':>8}  {'best score':>10}")
        for r in rows:
            lines.append(f"  {r['rank']:>4}  {r['canonical_title']:<{width}}  {r['distinct_count']:>8}  "
                         f"{r['best_score']:>10}")
        if d.get("flagged_count"):
            n = d["flagged_count"]
            noun = "title shares" if n == 1 else "titles share"
            lines.append(f"  note: {n} matched {noun} no word with the definition text")
    return "\n".join(lines) + "\n"


def run_report(cfg: RunConfig) -> Path:
    from .plotting import plot_score_distribution

    meta = _load_match_summary(cfg)
    paths = _paths(cfg)
    mdir, rdir = paths["matches"], paths["report"]
    tables: Dict[str, List[Dict[str, str]]] = {}
    hists = []
    top_buf, hist_buf = io.StringIO(), io.StringIO()
    tw = csv.writer(top_buf, lineterminator="\n")
    hw = csv.writer(hist_buf, lineterminator="\n")
    tw.writerow(("driver",) + cons.TOP_HEADER)
    hw.writerow(("driver", "bin", "count"))
    for d in meta["drivers"]:
        did = d["driver_id"]
        try:
            tables[did] = cons.read_top_table((mdir / f"{did}.top.csv").read_text(encoding="utf-8"))
            hrows = list(csv.DictReader(io.StringIO((mdir / f"{did}.histogram.csv").read_text(encoding="utf-8"))))
        except FileNotFoundError as exc:
            raise DataError(f"missing match output {exc.filename}; rerun the match stage") from exc
        for r in tables[did]:
            tw.writerow([d["name"], r["rank"], r["canonical_title"], r["distinct_count"], r["best_score"]])
        for r in hrows:
            hw.writerow([d["name"], r["bin"], r["count"]])
        hists.append((d["name"], {float(r["bin"]): int(r["count"]) for r in hrows}))
    atomic_write(rdir / "summary.txt", render_summary(meta, tables))
    atomic_write(rdir / "top.csv", top_buf.getvalue())
    atomic_write(rdir / "histogram.csv", hist_buf.getvalue())
    thresholds = {d["threshold"] for d in meta["drivers"]}
    fig = rdir / "score_distribution.png"
    tmp = rdir / ".score_distribution.tmp.png"
    plot_score_distribution(hists, tmp, meta.get("bin_width", BIN_WIDTH),
                            thresholds.pop() if len(thresholds) == 1 else None)
    os.replace(tmp, fig)
    return rdir / "summary.txt"


__all__ = [
    "DataError", "DriverSpec", "EmbedSummary", "PopulateOutcome", "ProviderUnavailable",
    "load_drivers", "run_ingest", "run_embed", "run_match", "run_populate", "run_report",
    "write_driver_templates", "bundled_driver_names",
]
