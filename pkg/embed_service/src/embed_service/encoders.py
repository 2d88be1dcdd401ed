"""Encoder backends.

Two interchangeable backends produce one vector per caller token plus a
mean-pooled text vector:

* ``TransformerEncoder`` wraps a pretrained transformer. Subword vectors
  from the final hidden layer are mean-pooled onto the caller's token
  boundaries via the tokenizer's character offsets.
* ``HashedEncoder`` is a self-contained deterministic fallback for
  environments without model weights (select it with a model name like
  ``hashed-256``). Each token vector mixes a hash of the token surface
  with a hash of the whole text, so equal surfaces in different texts
  get different vectors, mimicking contextual behavior.

Both are deterministic: the same request always produces the same bytes.
"""

from __future__ import annotations

import hashlib
import re
import threading

import numpy as np

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_HASHED_RE = re.compile(r"^hashed-(\d+)$")

_CONTEXT_MIX = 0.25  # weight of the whole-text hash in each token vector


def default_token_spans(text: str) -> list[tuple[int, int]]:
    """Word/punctuation split used when the caller sends no token offsets."""
    return [(m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def _hash_unit(payload: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    raw = rng.standard_normal(dim)
    return raw / np.linalg.norm(raw)


class HashedEncoder:
    """Deterministic hash-based encoder (no model weights required)."""

    def __init__(self, dim: int):
        self.dim = dim
        self.name = f"hashed-{dim}"

    def encode(self, text: str, token_spans: list[tuple[int, int]]):
        context = _hash_unit(text, self.dim)
        per_token = []
        for a, b in token_spans:
            surface = text[a:b]
            mixed = _hash_unit(surface, self.dim) + _CONTEXT_MIX * context
            per_token.append((mixed / np.linalg.norm(mixed)).astype(np.float32))
        pooled = _pool(per_token, self.dim)
        return per_token, pooled


class TransformerEncoder:
    """Pretrained transformer, final hidden layer, mean pooling."""

    def __init__(self, model_name: str):
        import torch
        from transformers import AutoModel, AutoTokenizer

        self._torch = torch
        self.name = model_name
        self.tokenizer = AutoTokenizer.from_pretrained(model_name, use_fast=True)
        self.model = AutoModel.from_pretrained(model_name)
        self.model.eval()
        self.dim = int(self.model.config.hidden_size)
        self._lock = threading.Lock()

    def encode(self, text: str, token_spans: list[tuple[int, int]]):
        torch = self._torch
        with self._lock, torch.no_grad():
            batch = self.tokenizer(
                text,
                return_offsets_mapping=True,
                return_tensors="pt",
                truncation=True,
            )
            offsets = batch.pop("offset_mapping")[0].tolist()
            hidden = self.model(**batch).last_hidden_state[0].numpy()
        per_token = []
        for a, b in token_spans:
            rows = [
                hidden[i]
                for i, (sa, sb) in enumerate(offsets)
                if sb > sa and max(sa, a) < min(sb, b)
            ]
            if rows:
                vec = np.stack(rows).mean(axis=0).astype(np.float32)
            else:
                vec = np.zeros(self.dim, dtype=np.float32)
            per_token.append(vec)
        pooled = _pool(per_token, self.dim)
        return per_token, pooled


def _pool(per_token: list[np.ndarray], dim: int) -> np.ndarray:
    if not per_token:
        return np.zeros(dim, dtype=np.float32)
    return np.stack([v.astype(np.float64) for v in per_token]).mean(axis=0).astype(np.float32)


def load_encoder(model_name: str):
    """Build the encoder named by ``model_name`` (hashed-<dim> or a model id)."""
    match = _HASHED_RE.match(model_name)
    if match:
        return HashedEncoder(int(match.group(1)))
    return TransformerEncoder(model_name)
