from __future__ import annotations

from pathlib import Path

from click.testing import CliRunner

from occmatch.cli import main

from .conftest import PLANTED

STAGES = ("ingest", "embed", "match", "populate", "report")


def cli(*args, config: Path | None = PLANTED / "run.conf", out: Path | None = None):
    opts = []
    if config is not None:
        opts += ["--config", str(config)]
    if out is not None:
        opts += ["--out-dir", str(out)]
    return CliRunner().invoke(main, [*opts, *map(str, args)], catch_exceptions=False)


def full_run(out: Path, config: Path = PLANTED / "run.conf") -> None:
    for stage in STAGES:
        r = cli(stage, config=config, out=out)
        assert r.exit_code == 0, (stage, r.output, r.stderr)


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and not p.name.startswith(".")}


def write_config(path: Path, **overrides) -> Path:
    """A copy of the planted run config with some keys replaced (absolute paths)."""
    values = {
        "corpus": PLANTED / "postings.jsonl",
        "field_map": PLANTED / "field_map.ini",
        "drivers_dir": PLANTED / "drivers",
        "rules": PLANTED / "rules.txt",
        "provider": "local",
        "dimension": 512,
        "threshold": 0.70,
        "top_k": 10,
        "parallelism": 2,
        "out_dir": path.parent / "out",
    }
    values.update(overrides)
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items() if v is not None), encoding="utf-8")
    return path
