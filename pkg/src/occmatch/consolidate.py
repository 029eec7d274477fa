"""Job-title consolidation into occupation groups, top-n tables and score histograms.

Rules file format (plain text, ``#`` comments)::

    [seniority]
    Senior
    Head of
    [plural]
    Seamstress => Seamstresses
    [merges]
    Cloud Ops Engineer => Cloud Operations Engineers

Merge targets are used verbatim as the group name.
"""
from __future__ import annotations

import csv
import io
import math
import os
import re
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Dict, FrozenSet, Iterable, List, Mapping, Sequence, Tuple

from .matcher import MatchResult

DEFAULT_SENIORITY = (
    "Senior", "Lead", "Junior", "Principal", "Head of", "Chief", "Staff", "Associate", "Graduate", "Entry-Level",
)

IRREGULAR_PLURALS = {
    "man": "men",
    "woman": "women",
    "person": "people",
    "child": "children",
    "staff": "staff",
    "personnel": "personnel",
    "chief": "chiefs",
}
# words that take no plural form as a group name
UNCOUNTABLE = frozenset({
    "staff", "personnel", "software", "equipment", "research", "support", "management",
    "administration", "security", "marketing", "sales", "data", "it", "hr", "finance",
})
SMALL_WORDS = frozenset({"of", "and", "for", "in", "the", "to", "at", "on", "a", "an", "or", "&"})
# the head noun ends where a qualifier starts: "Engineer - Cloud", "Director of Sales", "Analyst (SQL)"
_HEAD_SPLIT = re.compile(r"\s(?:-|\u2013|\(|\|)\s?|,\s|\s(?i:of|for|in|at|to)\s")


class UnresolvablePosting(KeyError):
    pass


@dataclass(frozen=True)
class ConsolidationRules:
    seniority_tokens: Tuple[str, ...] = DEFAULT_SENIORITY
    pluralization: Mapping[str, str] = field(default_factory=dict)
    custom_merges: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        phrases = sorted(
            {tuple(p.casefold().split()) for p in self.seniority_tokens if p.strip()},
            key=lambda p: (-len(p), p),
        )
        object.__setattr__(self, "_phrases", tuple(phrases))
        plural = dict(IRREGULAR_PLURALS)
        plural.update({k.casefold(): v for k, v in self.pluralization.items()})
        object.__setattr__(self, "_plural", plural)
        object.__setattr__(self, "_plural_forms", frozenset(v.casefold() for v in plural.values()))
        object.__setattr__(self, "_merges", {_collapse(k).casefold(): v for k, v in self.custom_merges.items()})
        object.__setattr__(self, "_targets", {_collapse(v).casefold(): v for v in self.custom_merges.values()})

    @classmethod
    def parse(cls, text: str) -> "ConsolidationRules":
        section = None
        seniority: List[str] = []
        plural: Dict[str, str] = {}
        merges: Dict[str, str] = {}
        saw_seniority = False
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip().lower()
                if section not in ("seniority", "plural", "merges"):
                    raise ValueError(f"line {lineno}: unknown section [{section}]")
                saw_seniority |= section == "seniority"
                continue
            if section == "seniority":
                seniority.append(line)
            elif section in ("plural", "merges"):
                if "=>" not in line:
                    raise ValueError(f"line {lineno}: expected 'alias => canonical'")
                a, b = (x.strip() for x in line.split("=>", 1))
                if not a or not b:
                    raise ValueError(f"line {lineno}: empty side in {raw!r}")
                (plural if section == "plural" else merges)[a] = b
            else:
                raise ValueError(f"line {lineno}: entry outside a section")
        return cls(
            seniority_tokens=tuple(seniority) if saw_seniority else DEFAULT_SENIORITY,
            pluralization=plural,
            custom_merges=merges,
        )

    @classmethod
    def load(cls, path: os.PathLike | str) -> "ConsolidationRules":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())


# nouns that only occur in the plural; "Ways of ..." qualifies the role after it
PLURALIA = frozenset({"ways", "sales", "operations", "systems", "communications", "analytics", "logistics",
                      "affairs", "relations", "services", "means", "works", "markets", "networks"})


def _collapse(s: str) -> str:
    return " ".join(s.split())


def _match_case(template: str, word: str) -> str:
    if template.isupper() and len(template) > 1:
        return word.upper()
    if template[:1].isupper():
        return word[:1].upper() + word[1:]
    return word


def pluralize(word: str, rules: ConsolidationRules) -> str:
    low = word.casefold()
    if low in rules._plural:
        return _match_case(word, rules._plural[low])
    if low in rules._plural_forms or low in UNCOUNTABLE or low in SMALL_WORDS:
        return word
    if low.endswith("person") and len(low) > 6:
        return word[:-6] + _match_case(word[-6:], "people")
    if not word[-1:].isalpha() or low.endswith(("s", "ing")):
        return word
    if word.isupper() and len(word) > 1:
        return word + "s"
    if low.endswith("y") and len(low) > 1 and low[-2] not in "aeiou":
        return word[:-1] + "ies"
    if low.endswith(("ch", "sh", "x", "z")):
        return word + "es"
    return word + "s"


def _strip_seniority(words: List[str], rules: ConsolidationRules) -> List[str]:
    changed = True
    while changed and words:
        changed = False
        low = [w.casefold() for w in words]
        for p in rules._phrases:
            n = len(p)
            if len(words) <= n:
                continue
            # never leave a dangling "of"/"and": "Chief of Staff" is a role, not a rank
            if tuple(low[:n]) == p and low[n] not in SMALL_WORDS:
                words, changed = words[n:], True
                break
            if tuple(low[-n:]) == p and low[-n - 1] not in SMALL_WORDS:
                words, changed = words[:-n], True
                break
    return words


def _titlecase(words: List[str]) -> List[str]:
    out = []
    for i, w in enumerate(words):
        if w.islower() and not (i and w in SMALL_WORDS):
            w = w[:1].upper() + w[1:]
        out.append(w)
    return out


def _plural_qualifier(text: str, m: re.Match) -> bool:
    """``Ways of Working Coach``: the word before "of" is not the head noun."""
    if m.group(0).strip().casefold() not in SMALL_WORDS:
        return False
    left = text[:m.start()].rsplit(" ", 1)[-1].casefold()
    return left in PLURALIA


def canonical_title(title: str, rules: ConsolidationRules | None = None) -> str:
    """Group name for a job title: seniority stripped, merges applied, plural head noun.

    >>> canonical_title("Senior Cloud Engineer")
    'Cloud Engineers'
    """
    rules = rules or DEFAULT_RULES
    t = _collapse(title)
    if not t:
        return ""
    key = t.casefold()
    if key in rules._targets:
        return rules._targets[key]
    if key in rules._merges:
        return rules._merges[key]
    words = _strip_seniority(t.split(" "), rules)
    stripped = " ".join(words)
    if stripped.casefold() in rules._merges:
        return rules._merges[stripped.casefold()]
    words = _titlecase(words)
    text = " ".join(words)
    m = next((m for m in _HEAD_SPLIT.finditer(text) if not _plural_qualifier(text, m)), None)
    head, tail = (text[:m.start()], text[m.start():]) if m else (text, "")
    hw = head.split(" ")
    hw[-1] = pluralize(hw[-1], rules)
    result = " ".join(hw) + tail
    return rules._merges.get(result.casefold(), result)


DEFAULT_RULES = ConsolidationRules()


# ---------------------------------------------------------------------------
# groups


@dataclass(frozen=True)
class OccupationGroup:
    canonical_title: str
    member_posting_ids: FrozenSet[str]
    distinct_count: int
    best_score: float
    member_titles: Tuple[str, ...] = ()

    def to_json(self) -> Dict:
        return {
            "canonical_title": self.canonical_title,
            "member_posting_ids": sorted(self.member_posting_ids),
            "member_titles": list(self.member_titles),
            "distinct_count": self.distinct_count,
            "best_score": round(self.best_score, 8),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "OccupationGroup":
        return cls(obj["canonical_title"], frozenset(obj["member_posting_ids"]), int(obj["distinct_count"]),
                   float(obj["best_score"]), tuple(obj.get("member_titles", ())))


def consolidate(
    matches: Sequence[MatchResult],
    postings: Mapping,
    rules: ConsolidationRules | None = None,
) -> List[OccupationGroup]:
    """Group one driver's matches by canonical title.

    ``postings`` maps posting id to an object with ``title`` and ``company``.
    ``distinct_count`` counts distinct (canonical title, company) pairs, so
    one employer's reposts of a role in several locations count once; a
    posting without a company counts on its own.
    """
    rules = rules or DEFAULT_RULES
    members: Dict[str, List[Tuple[MatchResult, object]]] = {}
    for m in matches:
        try:
            p = postings[m.posting_id]
        except KeyError:
            raise UnresolvablePosting(m.posting_id) from None
        title = getattr(p, "title", None) or m.title
        members.setdefault(canonical_title(title, rules), []).append((m, p))
    groups = []
    for name, rows in members.items():
        keys = set()
        for m, p in rows:
            company = getattr(p, "company", None)
            keys.add(("company", _collapse(company).casefold()) if company and company.strip() else ("posting", m.posting_id))
        titles = sorted({(getattr(p, "title", None) or m.title) for m, p in rows})
        groups.append(
            OccupationGroup(
                canonical_title=name,
                member_posting_ids=frozenset(m.posting_id for m, _ in rows),
                distinct_count=len(keys),
                best_score=max(m.score for m, _ in rows),
                member_titles=tuple(titles),
            )
        )
    groups.sort(key=lambda g: (-g.best_score, g.canonical_title))
    return groups


def top_n(groups: Sequence[OccupationGroup], n: int = 10) -> List[OccupationGroup]:
    return list(groups[:max(n, 0)])


# ---------------------------------------------------------------------------
# histogram


def _bin_index(score: float, width: float) -> int:
    # round first: 0.70 / 0.01 is 69.99999999999999 in binary floating point
    return math.floor(round(score / width, 9))


def bin_label(lo: float, width: float) -> str:
    decimals = max(0, -Decimal(repr(width)).normalize().as_tuple().exponent)
    return f"{lo:.{decimals}f}"


def frequency_distribution(
    matches: Iterable[MatchResult | float], bin_width: float = 0.01
) -> Dict[float, int]:
    """Counts per half-open score bin ``[lo, lo + bin_width)``, keyed by ``lo``."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    counts: Dict[int, int] = {}
    for m in matches:
        s = m.score if isinstance(m, MatchResult) else float(m)
        k = _bin_index(s, bin_width)
        counts[k] = counts.get(k, 0) + 1
    decimals = max(0, -Decimal(repr(bin_width)).normalize().as_tuple().exponent)
    return {round(k * bin_width, decimals + 2): counts[k] for k in sorted(counts)}


# ---------------------------------------------------------------------------
# csv emitters

TOP_HEADER = ("rank", "canonical_title", "distinct_count", "best_score")


def top_table_csv(groups: Sequence[OccupationGroup]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TOP_HEADER)
    for i, g in enumerate(groups, 1):
        w.writerow([i, g.canonical_title, g.distinct_count, f"{g.best_score:.8f}"])
    return buf.getvalue()


def read_top_table(text: str) -> List[Dict[str, str]]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and tuple(rows[0].keys()) != TOP_HEADER:
        raise ValueError(f"unexpected top-table header {tuple(rows[0].keys())}")
    return rows


def histogram_csv(hist: Mapping[float, int], bin_width: float = 0.01) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("bin", "count"))
    for lo, c in sorted(hist.items()):
        w.writerow([bin_label(lo, bin_width), c])
    return buf.getvalue()
