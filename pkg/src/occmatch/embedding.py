"""Text embeddings behind a provider interface, with token budgeting and caching.

Two providers ship: :class:`LocalHashEmbedder`, a deterministic hashed
bag-of-tokens used offline and in tests, and :class:`RemoteEmbeddingProvider`,
a client for OpenAI-compatible ``/embeddings`` endpoints.
"""
from __future__ import annotations

import hashlib
import logging
import os
import random
import re
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import API_KEY_ENV
from .vector_cache import VectorCache, cache_key

log = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-6


class EmbeddingError(Exception):
    pass


class EmptyInput(EmbeddingError, ValueError):
    pass


class ProviderUnavailable(EmbeddingError):
    pass


class InputTooLong(EmbeddingError):
    """Raised by a provider when it rejects an input for length."""


class BudgetTokenizerMismatch(EmbeddingError):
    pass


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    provider_tag: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("embedding must be a non-empty 1-d vector")
        norm = float(np.linalg.norm(v.astype(np.float64)))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ValueError(f"embedding is not unit-norm (norm={norm!r})")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dimension(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.provider_tag == other.provider_tag and self.values.tobytes() == other.values.tobytes()

    __hash__ = None


def unit(values: Sequence[float], provider_tag: str) -> EmbeddingVector:
    """L2-normalize in float64, then store as float32."""
    v = np.asarray(values, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0.0:
        raise EmptyInput("cannot normalize a zero vector")
    return EmbeddingVector((v / norm).astype(np.float32), provider_tag)


# ---------------------------------------------------------------------------
# tokens

_TOKEN = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> List[str]:
    """Whitespace-and-punctuation tokens: runs of word characters, or single punctuation marks."""
    return _TOKEN.findall(text)


@dataclass(frozen=True)
class TokenBudget:
    max_tokens: int = 8192

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")

    def count(self, text: str) -> int:
        return sum(1 for _ in _TOKEN.finditer(text))

    def truncate(self, text: str) -> str:
        return truncate_to_budget(text, self)


def truncate_to_budget(text: str, budget: TokenBudget) -> str:
    """Longest prefix of ``text`` ending on a token boundary with at most ``max_tokens`` tokens."""
    end = None
    for n, m in enumerate(_TOKEN.finditer(text), 1):
        if n > budget.max_tokens:
            return text[:end]
        end = m.end()
    return text


# ---------------------------------------------------------------------------
# providers


class EmbeddingProvider(ABC):
    provider_tag: str
    dimension: int
    max_input_tokens: int = 8192
    batch_limit: int = 64

    @abstractmethod
    def embed_batch(self, texts: Sequence[str]) -> List[np.ndarray]:
        """Raw (not necessarily normalized) vectors, one per text, in order."""


class LocalHashEmbedder(EmbeddingProvider):
    """Signed feature hashing over lower-cased word tokens.

    Each token is hashed with BLAKE2b (8-byte digest, personalization
    ``occmatch-lhe-v1``). The digest read as a little-endian u64 gives the
    bucket (``h % dimension``) and the sign (top bit set means -1).
    Punctuation tokens are ignored.
    """

    PERSON = b"occmatch-lhe-v1"

    def __init__(self, dimension: int = 512, max_input_tokens: int = 8192) -> None:
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension
        self.max_input_tokens = max_input_tokens
        self.provider_tag = f"local-hash-v1/d{dimension}"
        self.batch_limit = 256

    def bucket(self, token: str) -> Tuple[int, float]:
        h = int.from_bytes(
            hashlib.blake2b(token.encode("utf-8"), digest_size=8, person=self.PERSON).digest(), "little"
        )
        return h % self.dimension, (-1.0 if h >> 63 else 1.0)

    def raw(self, text: str) -> np.ndarray:
        v = np.zeros(self.dimension, dtype=np.float64)
        for tok in tokenize(text):
            if tok[0].isalnum() or tok[0] == "_":
                i, s = self.bucket(tok.casefold())
                v[i] += s
        return v

    def embed_batch(self, texts: Sequence[str]) -> List[np.ndarray]:
        return [self.raw(t) for t in texts]


def local_embed(text: str, dimension: int = 512) -> EmbeddingVector:
    emb = LocalHashEmbedder(dimension)
    if not text.strip():
        raise EmptyInput("empty text")
    return unit(emb.raw(text), emb.provider_tag)


class RemoteEmbeddingProvider(EmbeddingProvider):
    """Client for an OpenAI-compatible embeddings endpoint.

    The API key is read from ``OCCMATCH_API_KEY`` only. Transient failures
    (transport errors, 429, 5xx) are retried with exponential backoff and
    jitter, at most ``max_attempts`` times in total.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        dimension: int,
        *,
        max_input_tokens: int = 8192,
        batch_limit: int = 16,
        max_attempts: int = 5,
        backoff: float = 1.0,
        timeout: float = 60.0,
        transport=None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        import httpx

        api_key = os.environ.get(API_KEY_ENV)
        if not api_key:
            raise ProviderUnavailable(f"{API_KEY_ENV} is not set")
        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.max_input_tokens = max_input_tokens
        self.batch_limit = batch_limit
        self.max_attempts = min(max_attempts, 5)
        self.backoff = backoff
        self.provider_tag = f"remote/{model}/d{dimension}"
        self._sleep = sleep
        self._httpx = httpx
        self._client = httpx.Client(
            transport=transport,
            timeout=timeout,
            headers={"Authorization": f"Bearer {api_key}", "api-key": api_key},
        )

    def embed_batch(self, texts: Sequence[str]) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for i in range(0, len(texts), self.batch_limit):
            out.extend(self._request(list(texts[i:i + self.batch_limit])))
        return out

    def _request(self, texts: List[str]) -> List[np.ndarray]:
        httpx = self._httpx
        last = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1) * (1 + random.random() * 0.1))
            try:
                resp = self._client.post(self.endpoint, json={"input": texts, "model": self.model})
            except httpx.TransportError as exc:
                last = str(exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                body = resp.text
                if "maximum context length" in body or "too long" in body or "too many tokens" in body:
                    raise InputTooLong(body[:200])
                raise ProviderUnavailable(f"HTTP {resp.status_code}: {body[:200]}")
            data = sorted(resp.json()["data"], key=lambda d: d["index"])
            vecs = [np.asarray(d["embedding"], dtype=np.float64) for d in data]
            if len(vecs) != len(texts) or any(v.size != self.dimension for v in vecs):
                raise ProviderUnavailable("provider returned vectors of unexpected count or dimension")
            return vecs
        raise ProviderUnavailable(f"gave up after {self.max_attempts} attempts ({last})")

    def close(self) -> None:
        self._client.close()


# ---------------------------------------------------------------------------
# embedding with cache


def _prepare(text: str, budget: TokenBudget) -> str:
    text = text.strip()
    if not text:
        raise EmptyInput("empty text")
    return truncate_to_budget(text, budget)


def _provider_one(text: str, provider: EmbeddingProvider) -> EmbeddingVector:
    """Embed one prepared text; on a length rejection re-truncate 10% tighter and retry once."""
    try:
        raw = provider.embed_batch([text])[0]
    except InputTooLong:
        n = TokenBudget().count(text)
        tighter = TokenBudget(max(1, int(n * 0.9)))
        log.warning("provider rejected %d-token input as too long; retrying at %d tokens", n, tighter.max_tokens)
        try:
            raw = provider.embed_batch([truncate_to_budget(text, tighter)])[0]
        except InputTooLong as exc:
            raise BudgetTokenizerMismatch(
                f"provider still rejects input after re-truncation to {tighter.max_tokens} tokens"
            ) from exc
    return unit(raw, provider.provider_tag)


def embed_text(
    text: str,
    provider: EmbeddingProvider,
    budget: TokenBudget | None = None,
    cache: VectorCache | None = None,
) -> EmbeddingVector:
    prepared = _prepare(text, budget or TokenBudget(provider.max_input_tokens))
    key = cache_key(prepared, provider.provider_tag)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return EmbeddingVector(hit, provider.provider_tag)
    vec = _provider_one(prepared, provider)
    if cache is not None:
        cache.put(key, vec.values)
    return vec


def lookup(text: str, provider_tag: str, budget: TokenBudget, cache: VectorCache) -> Optional[EmbeddingVector]:
    """Cached vector for ``text`` without calling any provider."""
    try:
        prepared = _prepare(text, budget)
    except EmptyInput:
        return None
    hit = cache.get(cache_key(prepared, provider_tag))
    return None if hit is None else EmbeddingVector(hit, provider_tag)


@dataclass
class CorpusEmbedding:
    vectors: Dict[str, EmbeddingVector] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)
    provider_calls: int = 0  # texts sent to the provider
    cache_hits: int = 0


def embed_corpus(
    items: Iterable[Tuple[str, str]],
    provider: EmbeddingProvider,
    budget: TokenBudget | None = None,
    cache: VectorCache | None = None,
    parallelism: int = 1,
    batch_size: int | None = None,
) -> CorpusEmbedding:
    """Embed ``(item_id, text)`` pairs; per-item failures are collected, not raised.

    Cached items are served without provider calls. Misses are embedded
    in batches across ``parallelism`` threads; results are written to the
    cache by the calling thread in input order, so the cache file does
    not depend on thread scheduling.
    """
    budget = budget or TokenBudget(provider.max_input_tokens)
    batch_size = batch_size or provider.batch_limit
    result = CorpusEmbedding()
    todo: List[Tuple[str, str, str]] = []  # id, prepared text, key
    queued: Dict[str, str] = {}
    for item_id, text in items:
        try:
            prepared = _prepare(text or "", budget)
        except EmptyInput:
            result.failures[item_id] = "empty-input"
            continue
        key = cache_key(prepared, provider.provider_tag)
        hit = cache.get(key) if cache is not None else None
        if hit is not None:
            result.vectors[item_id] = EmbeddingVector(hit, provider.provider_tag)
            result.cache_hits += 1
        else:
            todo.append((item_id, prepared, key))
            queued[item_id] = key

    batches = [todo[i:i + batch_size] for i in range(0, len(todo), batch_size)]

    def run(batch):
        texts = [t for _, t, _ in batch]
        try:
            raws = provider.embed_batch(texts)
            return [(unit(r, provider.provider_tag), None) for r in raws]
        except (InputTooLong, EmptyInput, ValueError):
            pass
        except ProviderUnavailable as exc:
            return [(None, f"provider-unavailable: {exc}")] * len(batch)
        out = []
        for t in texts:  # isolate the offending item(s)
            try:
                out.append((_provider_one(t, provider), None))
            except EmbeddingError as exc:
                out.append((None, f"{type(exc).__name__}: {exc}"))
            except ValueError as exc:
                out.append((None, f"invalid-vector: {exc}"))
        return out

    if parallelism > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(run, batches))
    else:
        outcomes = [run(b) for b in batches]

    for batch, outs in zip(batches, outcomes):
        result.provider_calls += len(batch)
        for (item_id, _, key), (vec, err) in zip(batch, outs):
            if vec is None:
                result.failures[item_id] = err
                continue
            result.vectors[item_id] = vec
            if cache is not None:
                cache.put(key, vec.values)
    return result


def make_provider(name: str, dimension: int = 512, max_tokens: int = 8192,
                  endpoint: str | None = None, model: str | None = None) -> EmbeddingProvider:
    if name == "local":
        return LocalHashEmbedder(dimension, max_input_tokens=max_tokens)
    if name == "remote":
        if not endpoint or not model:
            raise ValueError("remote provider needs endpoint and model")
        return RemoteEmbeddingProvider(endpoint, model, dimension, max_input_tokens=max_tokens)
    raise ValueError(f"unknown provider {name!r}")


def provider_tag_for(name: str, dimension: int = 512, model: str | None = None) -> str:
    """Provider tag without constructing the provider (no credentials needed)."""
    if name == "local":
        return f"local-hash-v1/d{dimension}"
    if name == "remote":
        return f"remote/{model}/d{dimension}"
    raise ValueError(f"unknown provider {name!r}")
