"""Job-posting ingestion: streaming parse, text cleaning, dedup, corpus build.

Input dumps are either JSON lines (one object per line) or RFC-4180 CSV
with a header row. A field map translates our field names to the source
column/key names; dotted keys reach into nested JSON objects
(``hiringOrganization.name``).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import re
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path
from typing import IO, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from .config import ConfigError, read_key_values

FIELDS = ("source_id", "title", "description", "company", "location", "posted_date", "url", "source_portal")
REQUIRED = ("source_id", "title", "description")
FORMATS = ("jsonld-lines", "csv")


@dataclass(frozen=True)
class RawPostingRecord:
    source_id: str
    title: str
    description: str
    company: Optional[str] = None
    location: Optional[str] = None
    posted_date: Optional[date] = None
    url: Optional[str] = None
    source_portal: Optional[str] = None

    def __post_init__(self):
        if not self.source_id:
            raise ValueError("source_id must be non-empty")


@dataclass(frozen=True)
class ParseFailure:
    offset: int  # 1-based line (jsonl) or record number (csv, header excluded)
    reason: str
    source_id: Optional[str] = None


@dataclass(frozen=True)
class CleanPosting:
    posting_id: str
    title: str
    description: str
    company: Optional[str] = None
    location: Optional[str] = None
    posted_date: Optional[date] = None
    url: Optional[str] = None

    def to_json(self) -> Dict[str, Optional[str]]:
        d = asdict(self)
        d["posted_date"] = self.posted_date.isoformat() if self.posted_date else None
        return d

    @classmethod
    def from_json(cls, obj: Mapping) -> "CleanPosting":
        pd = obj.get("posted_date")
        return cls(
            posting_id=obj["posting_id"],
            title=obj["title"],
            description=obj["description"],
            company=obj.get("company"),
            location=obj.get("location"),
            posted_date=date.fromisoformat(pd) if pd else None,
            url=obj.get("url"),
        )


@dataclass
class CorpusStats:
    raw_count: int = 0
    after_dedup_count: int = 0
    after_malformed_drop_count: int = 0
    drop_reasons: Dict[str, int] = field(default_factory=dict)

    def as_tuple(self) -> Tuple[int, int, int]:
        return (self.raw_count, self.after_dedup_count, self.after_malformed_drop_count)

    def to_json(self) -> Dict:
        d = asdict(self)
        d["drop_reasons"] = dict(sorted(self.drop_reasons.items()))
        return d


# ---------------------------------------------------------------------------
# field mapping


@dataclass(frozen=True)
class FieldMap:
    """Our field name -> source key (dotted path for nested JSON)."""

    source_id: str = "source_id"
    title: str = "title"
    description: str = "description"
    company: str = "company"
    location: str = "location"
    posted_date: str = "posted_date"
    url: str = "url"
    source_portal: str = "source_portal"

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "FieldMap":
        unknown = set(values) - set(FIELDS)
        if unknown:
            raise ConfigError(f"unknown field-map keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in values.items() if v})

    @classmethod
    def load(cls, path: os.PathLike | str) -> "FieldMap":
        return cls.from_mapping(read_key_values(path))


def infer_format(path: os.PathLike | str) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".ldjson", ".ndjson", ".json"):
        return "jsonld-lines"
    if suffix == ".csv":
        return "csv"
    raise ConfigError(f"cannot infer posting format from extension {suffix!r}; declare it")


# ---------------------------------------------------------------------------
# parsing


def _lookup(obj: Mapping, dotted: str):
    cur = obj
    for part in dotted.split("."):
        if not isinstance(cur, Mapping) or part not in cur:
            return None
        cur = cur[part]
    return cur


def _parse_date(value: Optional[str]) -> Optional[date]:
    if not value:
        return None
    try:
        return date.fromisoformat(value.strip()[:10])
    except ValueError:
        return None


class _BadField(Exception):
    pass


def _as_text(name: str, value) -> Optional[str]:
    if value is None:
        return None
    if isinstance(value, str):
        return value
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return str(value)
    raise _BadField(f"malformed:field-type:{name}")


def _make_record(get, offset: int) -> Union[RawPostingRecord, ParseFailure]:
    try:
        values = {name: _as_text(name, get(name)) for name in FIELDS}
    except _BadField as exc:
        return ParseFailure(offset, str(exc))
    sid = values["source_id"]
    for name in REQUIRED:
        v = values[name]
        if v is None or (name == "source_id" and not v.strip()):
            return ParseFailure(offset, f"missing-field:{name}", sid or None)
    values["posted_date"] = _parse_date(values["posted_date"])
    for name in ("company", "location", "url", "source_portal"):
        if values[name] is not None and not values[name].strip():
            values[name] = None
    return RawPostingRecord(**values)


def _text_stream(stream: IO, newline: Optional[str]) -> IO[str]:
    if isinstance(stream, io.TextIOBase):
        return stream
    return io.TextIOWrapper(stream, encoding="utf-8", errors="replace", newline=newline)


def _iter_jsonl(text: IO[str], fmap: FieldMap) -> Iterator[Union[RawPostingRecord, ParseFailure]]:
    for lineno, line in enumerate(text, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            yield ParseFailure(lineno, "malformed:json")
            continue
        if not isinstance(obj, dict):
            yield ParseFailure(lineno, "malformed:not-object")
            continue
        yield _make_record(lambda name: _lookup(obj, getattr(fmap, name)), lineno)


def _iter_csv(text: IO[str], fmap: FieldMap) -> Iterator[Union[RawPostingRecord, ParseFailure]]:
    reader = csv.reader(text)
    try:
        header = next(reader)
    except StopIteration:
        return
    except csv.Error:
        yield ParseFailure(1, "malformed:csv-header")
        return
    columns = {name: i for i, name in enumerate(header)}
    index = {name: columns.get(getattr(fmap, name)) for name in FIELDS}
    recno = 0
    while True:
        recno += 1
        try:
            row = next(reader)
        except StopIteration:
            return
        except csv.Error:
            yield ParseFailure(recno, "malformed:csv-row")
            continue
        if not row:
            recno -= 1
            continue
        if len(row) != len(header):
            yield ParseFailure(recno, "malformed:csv-row")
            continue
        yield _make_record(lambda name: None if index[name] is None else row[index[name]], recno)


def iter_posting_stream(
    stream: IO, fmt: str, fmap: FieldMap | None = None
) -> Iterator[Union[RawPostingRecord, ParseFailure]]:
    """Yield one record or failure per input record, holding one record at a time.

    ``stream`` may be binary (decoded as UTF-8, bad bytes replaced) or text.
    """
    fmap = fmap or FieldMap()
    if fmt == "jsonld-lines":
        return _iter_jsonl(_text_stream(stream, None), fmap)
    if fmt == "csv":
        return _iter_csv(_text_stream(stream, ""), fmap)
    raise ConfigError(f"unknown posting format {fmt!r}; expected one of {FORMATS}")


def parse_posting_stream(
    stream: IO, fmt: str, fmap: FieldMap | None = None
) -> Tuple[List[RawPostingRecord], List[ParseFailure]]:
    records: List[RawPostingRecord] = []
    failures: List[ParseFailure] = []
    for item in iter_posting_stream(stream, fmt, fmap):
        (failures if isinstance(item, ParseFailure) else records).append(item)
    return records, failures


# ---------------------------------------------------------------------------
# text cleaning

RETAINED_PUNCT = frozenset(".,'-")
_ENTITY = re.compile(r"&(?:#[0-9]+|#[xX][0-9a-fA-F]+|[A-Za-z][A-Za-z0-9]*);")
_SPACES = re.compile(r" {2,}")


def _is_wordchar(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "LN"


def is_allowed_char(ch: str) -> bool:
    return ch == " " or ch in RETAINED_PUNCT or unicodedata.category(ch)[0] in "LNM"


def normalize_text(text: str) -> str:
    """Clean free text for embedding while preserving case.

    Control/format characters and U+FFFD are deleted, HTML entities and
    punctuation become spaces, whitespace runs collapse to one space. The
    characters ``. , ' -`` survive only between two letters/digits
    (``e-commerce``, ``don't``, ``3.5``).
    """
    if not text:
        return ""
    if text.isascii():
        s = _ENTITY.sub(" ", text).translate(_ASCII_TABLE)
        return _SPACES.sub(" ", _LONE_PUNCT.sub(" ", s)).strip()
    return _normalize_general(text)


def _ascii_table() -> Dict[int, Optional[str]]:
    table: Dict[int, Optional[str]] = {}
    for i in range(128):
        ch = chr(i)
        if ch.isspace():
            table[i] = " "
        elif unicodedata.category(ch)[0] == "C":
            table[i] = None
        elif not (ch.isalnum() or ch in RETAINED_PUNCT):
            table[i] = " "
    return table


_ASCII_TABLE = _ascii_table()
_LONE_PUNCT = re.compile(r"(?<![A-Za-z0-9])[.,'-]|[.,'-](?![A-Za-z0-9])")


def _normalize_general(text: str) -> str:
    s = _ENTITY.sub(" ", unicodedata.normalize("NFC", text))
    out = []
    for ch in s:
        if ch.isspace():
            out.append(" ")
            continue
        cat = unicodedata.category(ch)
        if cat[0] == "C" or ch == "�":
            continue
        if cat[0] in "LNM" or ch in RETAINED_PUNCT:
            out.append(ch)
        else:
            out.append(" ")
    for i, ch in enumerate(out):
        if ch in RETAINED_PUNCT:
            keep = 0 < i < len(out) - 1 and _is_wordchar(out[i - 1]) and _is_wordchar(out[i + 1])
            if not keep:
                out[i] = " "
    cleaned = _SPACES.sub(" ", "".join(out)).strip()
    return unicodedata.normalize("NFC", cleaned)


# ---------------------------------------------------------------------------
# dedup and corpus build


def content_id(title: str, description: str) -> str:
    """Stable id over already-normalized title and description."""
    h = hashlib.sha256()
    h.update(title.encode("utf-8"))
    h.update(b"\x1f")
    h.update(description.encode("utf-8"))
    return h.hexdigest()[:16]


def dedup_key(record: RawPostingRecord) -> str:
    return content_id(normalize_text(record.title), normalize_text(record.description))


def deduplicate(records: Iterable[RawPostingRecord]) -> List[RawPostingRecord]:
    """Keep the first record per content key, in input order."""
    seen = set()
    out = []
    for r in records:
        k = dedup_key(r)
        if k not in seen:
            seen.add(k)
            out.append(r)
    return out


class CorpusBuilder:
    """Incremental corpus build; memory holds the seen-key set, not the records."""

    def __init__(self) -> None:
        self.stats = CorpusStats()
        self._seen: set = set()
        self._drops: Counter = Counter()

    def add_failure(self, failure: ParseFailure) -> None:
        self.stats.raw_count += 1
        self.stats.after_dedup_count += 1
        self._drops[f"parse:{failure.reason}"] += 1
        self._sync()

    def add(self, record: RawPostingRecord) -> Optional[CleanPosting]:
        self.stats.raw_count += 1
        title = normalize_text(record.title)
        desc = normalize_text(record.description)
        pid = content_id(title, desc)
        if pid in self._seen:
            self._drops["duplicate"] += 1
            self._sync()
            return None
        self._seen.add(pid)
        self.stats.after_dedup_count += 1
        if not title or not desc:
            self._drops["empty-title" if not title else "empty-description"] += 1
            self._sync()
            return None
        self.stats.after_malformed_drop_count += 1
        self._sync()
        return CleanPosting(pid, title, desc, record.company, record.location, record.posted_date, record.url)

    def feed(self, item: Union[RawPostingRecord, ParseFailure]) -> Optional[CleanPosting]:
        if isinstance(item, ParseFailure):
            self.add_failure(item)
            return None
        return self.add(item)

    def _sync(self) -> None:
        self.stats.drop_reasons = dict(self._drops)


def iter_corpus(
    items: Iterable[Union[RawPostingRecord, ParseFailure]], builder: CorpusBuilder | None = None
) -> Iterator[CleanPosting]:
    builder = builder if builder is not None else CorpusBuilder()
    for item in items:
        posting = builder.feed(item)
        if posting is not None:
            yield posting


def build_corpus(
    records: Sequence[RawPostingRecord], failures: Sequence[ParseFailure] = ()
) -> Tuple[List[CleanPosting], CorpusStats]:
    """Dedup, drop malformed and empty records, normalize.

    Parse failures count towards ``raw_count`` and are dropped in the
    malformed step, after dedup, so the three counts stay monotone.
    """
    builder = CorpusBuilder()
    for f in failures:
        builder.add_failure(f)
    postings = list(iter_corpus(records, builder))
    return postings, builder.stats


# ---------------------------------------------------------------------------
# optional corpus filters (location / date window)


@dataclass(frozen=True)
class PostingFilter:
    locations: Tuple[str, ...] = ()
    date_from: Optional[date] = None
    date_to: Optional[date] = None

    @property
    def active(self) -> bool:
        return bool(self.locations or self.date_from or self.date_to)

    def accepts(self, record: RawPostingRecord) -> bool:
        if self.locations:
            loc = (record.location or "").casefold()
            if not any(x.casefold() in loc for x in self.locations):
                return False
        if self.date_from or self.date_to:
            d = record.posted_date
            if d is None:
                return False
            if self.date_from and d < self.date_from:
                return False
            if self.date_to and d > self.date_to:
                return False
        return True


def write_corpus_line(posting: CleanPosting) -> str:
    return json.dumps(posting.to_json(), ensure_ascii=False) + "\n"


def read_corpus(path: os.PathLike | str) -> List[CleanPosting]:
    with open(path, encoding="utf-8") as fh:
        return [CleanPosting.from_json(json.loads(line)) for line in fh if line.strip()]
