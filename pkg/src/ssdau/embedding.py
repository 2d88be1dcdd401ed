"""Pluggable contextual-embedding providers.

Three implementations share one contract: ``embed(text, tokens)`` returns
one float32 vector per corpus token plus a pooled (mean) sentence vector,
and identical inputs always produce identical outputs.

* ``deterministic_test``: a context-free embedder. Each token vector is
  drawn from a generator seeded with the SHA-256 of the token surface and
  normalized to the unit sphere, so the whole pipeline is reproducible
  with no external service.
* ``service``: HTTP client for the embedding microservice
  (POST /embed, JSON in/out). The endpoint can be overridden with the
  ``SSDAU_EMBED_ENDPOINT`` environment variable.
* ``file_cache``: wraps another provider with a content-hash-keyed
  binary cache (little-endian float32 records plus a JSON index); cached
  results are bit-identical to uncached ones.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Sentence, Token
from .errors import (
    ConfigurationError,
    EmptySpanError,
    ProviderError,
    TransportError,
)

ENDPOINT_ENV_VAR = "SSDAU_EMBED_ENDPOINT"
DEFAULT_TEST_DIMENSION = 32


@dataclass
class ProviderConfig:
    kind: str = "deterministic_test"  # service | file_cache | deterministic_test
    dimension: int = DEFAULT_TEST_DIMENSION
    endpoint: str = ""
    cache_dir: str = ""
    timeout: float = 10.0
    retries: int = 3
    max_in_flight: int = 4

    def __post_init__(self):
        if self.dimension <= 0:
            raise ConfigurationError("embedding dimension must be positive")
        if self.kind not in ("service", "file_cache", "deterministic_test"):
            raise ConfigurationError(f"unknown provider kind: {self.kind!r}")


class DeterministicTestProvider:
    """Context-free hash-to-unit-sphere embedder (pure in the token surface)."""

    def __init__(self, dimension: int = DEFAULT_TEST_DIMENSION):
        self.dimension = dimension
        self._memo: dict[str, np.ndarray] = {}

    @property
    def fingerprint(self) -> str:
        return f"deterministic_test:{self.dimension}"

    def _token_vector(self, surface: str) -> np.ndarray:
        vec = self._memo.get(surface)
        if vec is None:
            digest = hashlib.sha256(surface.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            raw = rng.standard_normal(self.dimension)
            vec = (raw / np.linalg.norm(raw)).astype(np.float32)
            self._memo[surface] = vec
        return vec

    def embed(self, text: str, tokens: list[Token]):
        per_token = [self._token_vector(t.surface) for t in tokens]
        pooled = pool(per_token, self.dimension)
        return per_token, pooled


class ServiceProvider:
    """Client for the embedding HTTP service."""

    def __init__(self, config: ProviderConfig):
        if not config.endpoint:
            raise ConfigurationError("service provider requires an endpoint")
        self.endpoint = config.endpoint.rstrip("/")
        self.dimension = config.dimension
        self._timeout = config.timeout
        self._retries = config.retries
        self._gate = threading.BoundedSemaphore(max(1, config.max_in_flight))

    @property
    def fingerprint(self) -> str:
        return f"service:{self.endpoint}:{self.dimension}"

    def _post(self, payload: dict) -> dict:
        import requests

        last_exc = None
        for attempt in range(self._retries + 1):
            try:
                with self._gate:
                    resp = requests.post(
                        f"{self.endpoint}/embed", json=payload, timeout=self._timeout
                    )
                resp.raise_for_status()
                return resp.json()
            except requests.RequestException as exc:
                last_exc = exc
                if attempt < self._retries:
                    time.sleep(min(0.2 * (attempt + 1), 1.0))
        raise TransportError(
            f"embedding service unreachable after {self._retries + 1} attempts: "
            f"{last_exc}",
            retries=self._retries,
        )

    def embed(self, text: str, tokens: list[Token]):
        payload = {
            "texts": [text],
            "tokens": [[[t.char_start, t.char_end] for t in tokens]],
        }
        body = self._post(payload)
        dim = body.get("dim")
        if dim != self.dimension:
            raise ProviderError(
                f"service dimension {dim} does not match configured {self.dimension}"
            )
        vectors = body["vectors"][0]
        if len(vectors) != len(tokens):
            raise ProviderError(
                f"service returned {len(vectors)} token vectors for {len(tokens)} tokens"
            )
        per_token = [np.asarray(v, dtype=np.float32) for v in vectors]
        pooled = np.asarray(body["pooled"][0], dtype=np.float32)
        if pooled.shape != (self.dimension,):
            raise ProviderError("service pooled vector has the wrong dimension")
        return per_token, pooled


class FileCacheProvider:
    """Content-hash-keyed cache in front of another provider.

    Records are raw little-endian float32 (per-token vectors followed by
    the pooled vector) in a single data file; ``index.json`` maps each
    content hash to its record offset.
    """

    INDEX_NAME = "index.json"
    DATA_NAME = "cache.bin"

    def __init__(self, base, cache_dir: str | Path):
        self.base = base
        self.dimension = base.dimension
        self.dir = Path(cache_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._index_path = self.dir / self.INDEX_NAME
        self._data_path = self.dir / self.DATA_NAME
        self._lock = threading.Lock()
        if self._index_path.exists():
            self._index = json.loads(self._index_path.read_text(encoding="utf-8"))
        else:
            self._index = {}

    @property
    def fingerprint(self) -> str:
        return self.base.fingerprint

    def _key(self, text: str, tokens: list[Token]) -> str:
        h = hashlib.sha256()
        h.update(self.base.fingerprint.encode("utf-8"))
        h.update(b"\x00")
        h.update(text.encode("utf-8"))
        for t in tokens:
            h.update(f"\x00{t.char_start}:{t.char_end}".encode("utf-8"))
        return h.hexdigest()

    def embed(self, text: str, tokens: list[Token]):
        key = self._key(text, tokens)
        entry = self._index.get(key)
        if entry is not None:
            return self._read(entry)
        per_token, pooled = self.base.embed(text, tokens)
        with self._lock:
            entry = self._index.get(key)
            if entry is None:
                entry = self._write(key, per_token, pooled)
        return self._read(entry)

    def _write(self, key: str, per_token: list[np.ndarray], pooled: np.ndarray):
        blob = b"".join(v.astype("<f4").tobytes() for v in per_token)
        blob += pooled.astype("<f4").tobytes()
        with self._data_path.open("ab") as fh:
            offset = fh.tell()
            fh.write(blob)
        entry = {"offset": offset, "tokens": len(per_token), "dim": self.dimension}
        self._index[key] = entry
        tmp = self._index_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self._index, sort_keys=True), encoding="utf-8")
        tmp.replace(self._index_path)
        return entry

    def _read(self, entry: dict):
        dim = entry["dim"]
        count = entry["tokens"]
        size = (count + 1) * dim * 4
        with self._data_path.open("rb") as fh:
            fh.seek(entry["offset"])
            blob = fh.read(size)
        if len(blob) != size:
            raise ProviderError("truncated cache record")
        flat = np.frombuffer(blob, dtype="<f4")
        per_token = [flat[i * dim : (i + 1) * dim].copy() for i in range(count)]
        pooled = flat[count * dim :].copy()
        return per_token, pooled


def pool(per_token: list[np.ndarray], dimension: int) -> np.ndarray:
    """Mean pooling; the zero vector for an empty token list."""
    if not per_token:
        return np.zeros(dimension, dtype=np.float32)
    stacked = np.stack([v.astype(np.float64) for v in per_token])
    return stacked.mean(axis=0).astype(np.float32)


def make_provider(config: ProviderConfig, base=None):
    """Build a provider from config; env endpoint override applies here."""
    if config.kind == "deterministic_test":
        return DeterministicTestProvider(config.dimension)
    if config.kind == "service":
        endpoint = os.environ.get(ENDPOINT_ENV_VAR, "") or config.endpoint
        cfg = ProviderConfig(
            kind="service",
            dimension=config.dimension,
            endpoint=endpoint,
            timeout=config.timeout,
            retries=config.retries,
            max_in_flight=config.max_in_flight,
        )
        return ServiceProvider(cfg)
    if not config.cache_dir:
        raise ConfigurationError("file_cache provider requires cache_dir")
    inner = base if base is not None else DeterministicTestProvider(config.dimension)
    return FileCacheProvider(inner, config.cache_dir)


def embed_sentence(provider, sentence: Sentence):
    """Per-token and pooled vectors for a sentence."""
    return provider.embed(sentence.text, sentence.tokens)


def embed_span(provider, sentence: Sentence, token_start: int, token_end: int) -> np.ndarray:
    """Mean of the span's token vectors, computed in full-sentence context."""
    if token_start >= token_end:
        raise EmptySpanError(
            f"cannot embed empty span [{token_start}, {token_end}) "
            f"of sentence {sentence.id!r}"
        )
    per_token, _ = provider.embed(sentence.text, sentence.tokens)
    return pool(per_token[token_start:token_end], provider.dimension)


class SentenceVectorCache:
    """In-memory memo of per-sentence embedding results.

    Keyed by sentence id; loaded datasets are immutable, so an id never
    maps to two different texts within a run.
    """

    def __init__(self, provider):
        self.provider = provider
        self.dimension = provider.dimension
        self._memo: dict[str, tuple] = {}

    def vectors(self, sentence: Sentence):
        hit = self._memo.get(sentence.id)
        if hit is None:
            hit = self.provider.embed(sentence.text, sentence.tokens)
            self._memo[sentence.id] = hit
        return hit

    def span_vector(self, sentence: Sentence, token_start: int, token_end: int):
        if token_start >= token_end:
            raise EmptySpanError(
                f"cannot embed empty span [{token_start}, {token_end}) "
                f"of sentence {sentence.id!r}"
            )
        per_token, _ = self.vectors(sentence)
        return pool(per_token[token_start:token_end], self.dimension)
