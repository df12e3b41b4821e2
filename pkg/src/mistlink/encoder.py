"""Text features and the learned projections into knowledge-embedding space.

Features are a signed hashed bag of word unigrams, word bigrams and
character trigrams. They stand in for a frozen language-model encoder;
any external encoder can be plugged in through :func:`load_precomputed`.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionMismatch, UnencodableText
from .text import hash64, tokenize

logger = logging.getLogger(__name__)

DEFAULT_DIM = 4096


def text_features(text):
    """Namespaced feature strings with counts."""
    tokens = tokenize(text)
    feats = Counter("u:" + t for t in tokens)
    feats.update("b:" + a + " " + b for a, b in zip(tokens, tokens[1:]))
    for t in tokens:
        padded = f"<{t}>"
        feats.update("c:" + padded[i:i + 3] for i in range(len(padded) - 2))
    return feats


def encode_text(text, dim=DEFAULT_DIM, seed=0):
    """L2-normalized signed feature-hashing vector of ``text``."""
    feats = text_features(text)
    if not feats:
        raise UnencodableText(f"no features in text {text[:40]!r}")
    vec = np.zeros(dim)
    for feat, count in sorted(feats.items()):
        h = hash64(feat, seed)
        sign = 1.0 if (h >> 63) & 1 else -1.0
        vec[h % dim] += sign * count
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        # every feature cancelled by signed collisions
        raise UnencodableText(f"features of {text[:40]!r} cancel out")
    return vec / norm


class HashedEncoder:
    """Callable text encoder with a per-text cache."""

    kind = "hashed"

    def __init__(self, dim=DEFAULT_DIM, seed=0):
        self.dim = dim
        self.seed = seed
        self._cache = {}

    def __call__(self, text):
        vec = self._cache.get(text)
        if vec is None:
            vec = self._cache[text] = encode_text(text, self.dim, self.seed)
        return vec

    def features(self, key, text):
        return self(text)

    def config(self):
        return {"kind": self.kind, "dim": self.dim, "seed": self.seed}


class PrecomputedEncoder:
    """Looks vectors up by id rather than by text."""

    kind = "precomputed"

    def __init__(self, vectors, path=None):
        self.vectors = vectors
        self.path = path
        dims = {v.shape[0] for v in vectors.values()}
        self.dim = dims.pop() if dims else 0

    def features(self, key, text=None):
        try:
            return self.vectors[key]
        except KeyError:
            raise DataError(f"no precomputed vector for {key!r}") from None

    def config(self):
        return {"kind": self.kind, "dim": self.dim, "path": str(self.path) if self.path else None}


def load_precomputed(path):
    """Read ``{"id": str, "vector": [float]}`` lines into an id -> unit vector map."""
    from .corpus import read_jsonl

    out = {}
    dim = None
    for lineno, obj in read_jsonl(path):
        key = obj.get("id")
        vec = obj.get("vector")
        if not isinstance(key, str) or not isinstance(vec, list):
            raise DataError(f"{path}:{lineno}: expected fields 'id' (str) and 'vector' (list)")
        if key in out:
            raise DataError(f"{path}:{lineno}: duplicate id {key!r}")
        arr = np.asarray(vec, dtype=float)
        if arr.ndim != 1 or not np.all(np.isfinite(arr)):
            raise DataError(f"{path}:{lineno}: vector must be a flat list of finite numbers")
        if dim is None:
            dim = arr.shape[0]
        elif arr.shape[0] != dim:
            raise DimensionMismatch(f"{path}:{lineno}: vector has dim {arr.shape[0]}, expected {dim}")
        norm = np.linalg.norm(arr)
        if norm == 0.0:
            raise DataError(f"{path}:{lineno}: zero vector for {key!r}")
        out[key] = arr / norm
    return out


def write_precomputed(path, vectors):
    with open(path, "w", encoding="utf-8") as fh:
        for key, vec in vectors.items():
            fh.write(json.dumps({"id": key, "vector": [float(x) for x in vec]}) + "\n")


@dataclass
class ProjectionEncoder:
    """Affine map ``weight @ f + bias`` from features to embeddings."""

    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    @property
    def out_dim(self):
        return self.weight.shape[0]

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @classmethod
    def init(cls, out_dim, in_dim, rng, scale=1.0):
        # a unit-norm feature vector maps to entries with std ``scale``
        weight = rng.normal(0.0, scale, size=(out_dim, in_dim))
        return cls(weight, np.zeros(out_dim))

    def __call__(self, f):
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.in_dim:
            raise DimensionMismatch(f"feature dim {f.shape[-1]} != projection input dim {self.in_dim}")
        return f @ self.weight.T + self.bias


def project_tweet(enc, f, expected_dim=None):
    """Tweet knowledge embedding (the tweet-side projection layer)."""
    if expected_dim is not None and enc.out_dim != expected_dim:
        raise DimensionMismatch(f"tweet projection outputs {enc.out_dim}, model needs {expected_dim}")
    return enc(f)


def project_mist(enc, f, expected_dim=None):
    """Target knowledge embedding (the target-side projection layer)."""
    if expected_dim is not None and enc.out_dim != expected_dim:
        raise DimensionMismatch(f"target projection outputs {enc.out_dim}, model needs {expected_dim}")
    return enc(f)
