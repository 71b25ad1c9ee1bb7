"""Open-vocabulary label normalization and matching against a class vocabulary."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from .errors import ContractError, SchemaError

DEFAULT_SIMILARITY_THRESHOLD = 0.7

# absorbs rounding in the cosine of two identical unit vectors
_SIM_EPS = 1e-9

_SEPARATORS = re.compile(r"[_\-]+")
_WHITESPACE = re.compile(r"\s+")


def normalize_label(raw: str) -> str:
    """Lowercase, turn underscores/hyphens into spaces, collapse whitespace."""
    text = raw.lower()
    text = _SEPARATORS.sub(" ", text)
    return _WHITESPACE.sub(" ", text).strip()


@dataclass(frozen=True)
class ClassVocabulary:
    names: tuple
    normalized: tuple = field(init=False)
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if not self.names:
            raise SchemaError("class vocabulary is empty")
        normalized = tuple(normalize_label(n) for n in self.names)
        index = {}
        for i, n in enumerate(normalized):
            if n in index:
                raise SchemaError(f"classes {index[n]} and {i} both normalize to '{n}'")
            index[n] = i
        object.__setattr__(self, "normalized", normalized)
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.names)

    @classmethod
    def from_file(cls, path) -> "ClassVocabulary":
        """One class name per line; the line number (0-based) is the class index."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        while lines and not lines[-1].strip():
            lines.pop()
        for i, line in enumerate(lines):
            if not line.strip():
                raise SchemaError(f"blank class name on line {i + 1}", path=path)
        return cls(tuple(line.strip() for line in lines))


class EmbeddingProvider(Protocol):
    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return one row vector per input text."""


class HashEmbeddingProvider:
    """Deterministic mock: each distinct text maps to a hash-seeded unit vector."""

    def __init__(self, dim: int = 64):
        self.dim = dim

    def embed(self, texts):
        out = np.empty((len(texts), self.dim))
        for i, text in enumerate(texts):
            seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
            v = np.random.default_rng(seed).standard_normal(self.dim)
            out[i] = v / np.linalg.norm(v)
        return out


class TableEmbeddingProvider:
    """Looks vectors up in a fixed table; unknown texts raise KeyError."""

    def __init__(self, table: dict):
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}

    def embed(self, texts):
        return np.stack([self.table[t] for t in texts])


class MatchMode(str, Enum):
    EXACT = "exact"
    EMBEDDING = "embedding"


@dataclass(frozen=True)
class LabelMatcher:
    mode: MatchMode = MatchMode.EXACT
    embedding_provider: Optional[EmbeddingProvider] = None
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "mode", MatchMode(self.mode))
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise ContractError("similarity_threshold must lie in [0, 1]")
        if self.mode is MatchMode.EMBEDDING and self.embedding_provider is None:
            raise ContractError("embedding mode needs an embedding provider")


def _unit_rows(m):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return m / norms


def match_label(pred: str, vocab: ClassVocabulary, matcher: LabelMatcher) -> Optional[int]:
    """Map a predicted label to a class index, or None when nothing matches."""
    if len(vocab) == 0:
        raise ContractError("vocabulary is empty")
    key = normalize_label(pred)
    if matcher.mode is MatchMode.EXACT:
        return vocab.index.get(key)
    vocab_vecs = _unit_rows(matcher.embedding_provider.embed(list(vocab.normalized)))
    pred_vec = _unit_rows(matcher.embedding_provider.embed([key]))[0]
    sims = vocab_vecs @ pred_vec
    best = int(np.argmax(sims))  # first maximum, i.e. lowest class index on ties
    if sims[best] < matcher.similarity_threshold - _SIM_EPS:
        return None
    return best


def match_labels(preds: Sequence[str], vocab: ClassVocabulary, matcher: LabelMatcher) -> list:
    """Vectorized :func:`match_label` over many labels (one embedding call each side)."""
    if matcher.mode is MatchMode.EXACT:
        return [vocab.index.get(normalize_label(p)) for p in preds]
    if not preds:
        return []
    vocab_vecs = _unit_rows(matcher.embedding_provider.embed(list(vocab.normalized)))
    pred_vecs = _unit_rows(matcher.embedding_provider.embed([normalize_label(p) for p in preds]))
    sims = pred_vecs @ vocab_vecs.T
    best = np.argmax(sims, axis=1)
    return [int(b) if sims[i, b] >= matcher.similarity_threshold - _SIM_EPS else None
            for i, b in enumerate(best)]
