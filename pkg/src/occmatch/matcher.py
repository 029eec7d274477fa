"""Exact cosine-similarity retrieval over a flat vector index."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .embedding import EmbeddingVector, tokenize

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.70
# float32 screening error for unit vectors is far below this margin
_SCREEN_MARGIN = 1e-3


class MatchError(Exception):
    pass


class DimensionMismatch(MatchError, ValueError):
    pass


class ZeroVector(MatchError, ValueError):
    pass


class ProviderMismatch(MatchError, ValueError):
    pass


VectorLike = Union[EmbeddingVector, Sequence[float], np.ndarray]


def _as_array(v: VectorLike) -> np.ndarray:
    if isinstance(v, EmbeddingVector):
        v = v.values
    return np.asarray(v, dtype=np.float64).ravel()


def cosine(u: VectorLike, v: VectorLike) -> float:
    """<u, v> / (|u| |v|), computed in float64."""
    a, b = _as_array(u), _as_array(v)
    if a.size != b.size:
        raise DimensionMismatch(f"dimension {a.size} != {b.size}")
    a, b = _rescale(a), _rescale(b)
    na, nb = np.sqrt(np.dot(a, a)), np.sqrt(np.dot(b, b))
    return float(np.dot(a, b) / (na * nb))


def _rescale(a: np.ndarray) -> np.ndarray:
    # exact power-of-two scaling keeps tiny or huge inputs away from under/overflow
    peak = float(np.max(np.abs(a))) if a.size else 0.0
    if peak == 0.0:
        raise ZeroVector("cosine is undefined for a zero vector")
    if not np.isfinite(peak):
        raise ValueError("cosine needs finite inputs")
    return np.ldexp(a, -np.frexp(peak)[1])


def _row_scores(rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    """float64 cosine of each row against ``query``; a row's score does not depend on its neighbours."""
    rows = rows.astype(np.float64)
    dots = np.einsum("ij,j->i", rows, query)
    norms = np.sqrt(np.einsum("ij,ij->i", rows, rows))
    return dots / (norms * np.sqrt(np.dot(query, query)))


@dataclass(frozen=True)
class MatchResult:
    posting_id: str
    title: str
    score: float
    driver_id: str = ""

    def to_json_line(self) -> str:
        return (
            "{"
            f'"driver_id": {json.dumps(self.driver_id, ensure_ascii=False)}, '
            f'"posting_id": {json.dumps(self.posting_id)}, '
            f'"title": {json.dumps(self.title, ensure_ascii=False)}, '
            f'"score": {self.score:.8f}'
            "}\n"
        )

    @classmethod
    def from_json(cls, obj: Mapping) -> "MatchResult":
        return cls(obj["posting_id"], obj["title"], float(obj["score"]), obj.get("driver_id", ""))


class VectorIndex:
    """Immutable flat index of unit vectors sharing one provider tag.

    Rows are kept in ascending posting-id order. Scores are screened in
    float32 and every candidate within a safety margin of the threshold is
    rescored in float64, so returned scores and order are those of an
    exhaustive float64 scan.
    """

    def __init__(
        self,
        vectors: Mapping[str, EmbeddingVector],
        titles: Optional[Mapping[str, str]] = None,
        provider_tag: Optional[str] = None,
    ) -> None:
        ids = sorted(vectors)
        tags = {vectors[i].provider_tag for i in ids}
        if provider_tag is not None:
            tags.add(provider_tag)
        if len(tags) > 1:
            raise ProviderMismatch(f"index mixes provider tags: {sorted(tags)}")
        dims = {vectors[i].dimension for i in ids}
        if len(dims) > 1:
            raise DimensionMismatch(f"index mixes dimensions: {sorted(dims)}")
        self.provider_tag = tags.pop() if tags else None
        self.dimension = dims.pop() if dims else None
        self.ids = np.array(ids, dtype=object)
        self._sort_ids = np.array(ids, dtype=str) if ids else np.array([], dtype=str)
        self.matrix = (
            np.stack([vectors[i].values for i in ids]).astype(np.float32)
            if ids
            else np.zeros((0, 0), dtype=np.float32)
        )
        self.matrix.flags.writeable = False
        self.titles = dict(titles or {})

    @classmethod
    def from_arrays(cls, ids: Sequence[str], matrix: np.ndarray, provider_tag: str,
                    titles: Optional[Mapping[str, str]] = None) -> "VectorIndex":
        """Bulk constructor for already-normalized float32 rows (no per-row checks beyond norm)."""
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        idx = cls.__new__(cls)
        m = np.ascontiguousarray(np.asarray(matrix, dtype=np.float32)[order])
        norms = np.linalg.norm(m.astype(np.float64), axis=1) if len(ids) else np.zeros(0)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("index rows must be unit-norm")
        sorted_ids = [ids[i] for i in order]
        idx.provider_tag = provider_tag
        idx.dimension = m.shape[1] if len(ids) else None
        idx.ids = np.array(sorted_ids, dtype=object)
        idx._sort_ids = np.array(sorted_ids, dtype=str) if sorted_ids else np.array([], dtype=str)
        idx.matrix = m
        idx.matrix.flags.writeable = False
        idx.titles = dict(titles or {})
        return idx

    def __len__(self) -> int:
        return len(self.ids)

    def scores(self, query: EmbeddingVector) -> np.ndarray:
        """Exact float64 cosine against every row (used by oracles and small indexes)."""
        self._check(query)
        if len(self) == 0:
            return np.zeros(0)
        return _row_scores(self.matrix, query.values.astype(np.float64))

    def _check(self, query: EmbeddingVector) -> None:
        if self.provider_tag is not None and query.provider_tag != self.provider_tag:
            raise ProviderMismatch(f"query tag {query.provider_tag!r} != index tag {self.provider_tag!r}")
        if self.dimension is not None and query.dimension != self.dimension:
            raise DimensionMismatch(f"query dimension {query.dimension} != index dimension {self.dimension}")

    def search(self, query: EmbeddingVector, threshold: float) -> Tuple[np.ndarray, np.ndarray]:
        """Row indices and exact scores of every row scoring >= threshold (unsorted)."""
        self._check(query)
        if len(self) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        q64 = query.values.astype(np.float64)
        qnorm = np.linalg.norm(q64)
        approx = self.matrix @ (query.values / np.float32(qnorm))
        cand = np.flatnonzero(approx >= threshold - _SCREEN_MARGIN)
        if cand.size == 0:
            return cand, np.zeros(0)
        exact = _row_scores(self.matrix[cand], q64)
        keep = exact >= threshold
        return cand[keep], exact[keep]


def rank_matches(
    query: EmbeddingVector,
    index: VectorIndex,
    threshold: float = DEFAULT_THRESHOLD,
    top_k: Optional[int] = None,
    driver_id: str = "",
) -> List[MatchResult]:
    """Postings with cosine >= threshold, best first, ties by posting id."""
    if top_k is not None and top_k < 1:
        raise ValueError("top_k must be >= 1")
    rows, scores = index.search(query, threshold)
    if rows.size == 0:
        return []
    order = np.lexsort((index._sort_ids[rows], -scores))
    if top_k is not None:
        order = order[:top_k]
    return [
        MatchResult(index.ids[rows[i]], index.titles.get(index.ids[rows[i]], ""), float(scores[i]), driver_id)
        for i in order
    ]


@dataclass
class DriverMatches:
    results: Dict[str, List[MatchResult]]
    failures: Dict[str, str]


def match_all_drivers(
    drivers: Iterable,
    queries: Mapping[str, EmbeddingVector],
    index: VectorIndex,
    threshold: float = DEFAULT_THRESHOLD,
    top_k: Optional[int] = None,
    thresholds: Optional[Mapping[str, float]] = None,
) -> DriverMatches:
    """Rank the index against each driver's query vector independently.

    ``drivers`` holds driver ids or objects with ``id.local_id``.
    ``thresholds`` overrides the global threshold per driver id.
    """
    out = DriverMatches({}, {})
    for d in drivers:
        did = d if isinstance(d, str) else d.id.local_id
        if did in out.results or did in out.failures:
            continue
        q = queries.get(did)
        if q is None:
            out.failures[did] = "no query embedding"
            continue
        t = (thresholds or {}).get(did, threshold)
        try:
            out.results[did] = rank_matches(q, index, t, top_k, driver_id=did)
        except MatchError as exc:
            out.failures[did] = f"{type(exc).__name__}: {exc}"
    return out


def vocabulary_flags(results: Sequence[MatchResult], query_text: str, min_len: int = 3) -> List[MatchResult]:
    """Matches whose title shares no word with the query text.

    High scores with no title overlap are the cases worth a manual look,
    e.g. "quantum" used as marketing language rather than the technology.
    """
    vocab = {t.casefold() for t in tokenize(query_text) if t[0].isalnum() and len(t) >= min_len}
    flagged = []
    for r in results:
        words = {t.casefold() for t in tokenize(r.title) if t[0].isalnum()}
        if not words & vocab:
            flagged.append(r)
    return flagged


def write_matches(path, results: Sequence[MatchResult]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in results:
            fh.write(r.to_json_line())


def read_matches(path) -> List[MatchResult]:
    with open(path, encoding="utf-8") as fh:
        return [MatchResult.from_json(json.loads(line)) for line in fh if line.strip()]
