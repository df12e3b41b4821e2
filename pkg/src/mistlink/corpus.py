"""Document/target/judgment ingestion and MinHash near-duplicate removal."""

import json
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DataError, EmptyDocument
from .text import hash64, mix64, splitmix64, tokenize

logger = logging.getLogger(__name__)

DEFAULT_PERMUTATIONS = 100


@dataclass(frozen=True)
class TweetDoc:
    id: str
    text: str
    url_title: str | None = None

    def __post_init__(self):
        if not self.id:
            raise DataError("tweet id must be non-empty")
        if not self.text.strip():
            raise DataError(f"tweet {self.id!r} has empty text")

    @property
    def full_text(self):
        """Text with the linked page title appended, as judges saw it."""
        if self.url_title:
            return f"{self.text} URL: {self.url_title}"
        return self.text

    def to_json(self):
        d = {"id": self.id, "text": self.text}
        if self.url_title is not None:
            d["url_title"] = self.url_title
        return d


@dataclass(frozen=True)
class MisTarget:
    id: str
    description: str

    def __post_init__(self):
        if not self.id:
            raise DataError("target id must be non-empty")
        if not self.description.strip():
            raise DataError(f"target {self.id!r} has empty description")

    def to_json(self):
        return {"id": self.id, "text": self.description}


@dataclass(frozen=True)
class RelevanceJudgment:
    tweet_id: str
    mist_id: str
    relevant: bool

    def to_json(self):
        return {"tweet_id": self.tweet_id, "mist_id": self.mist_id, "relevant": self.relevant}


# --------------------------------------------------------------------------
# JSONL I/O


def read_jsonl(path):
    """Yield ``(line_number, object)`` pairs; blank lines are skipped.

    Raises DataError naming the file and 1-based line on malformed input.
    """
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def _field(obj, key, kind, path, lineno, optional=False):
    if key not in obj:
        if optional:
            return None
        raise DataError(f"{path}:{lineno}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, kind):
        raise DataError(f"{path}:{lineno}: field {key!r} has wrong type")
    return value


def _check_unique(items, path, what):
    seen = set()
    for item in items:
        if item.id in seen:
            raise DataError(f"{path}: duplicate {what} id {item.id!r}")
        seen.add(item.id)


def load_tweets(path):
    docs = []
    for lineno, obj in read_jsonl(path):
        try:
            docs.append(TweetDoc(
                _field(obj, "id", str, path, lineno),
                _field(obj, "text", str, path, lineno),
                _field(obj, "url_title", str, path, lineno, optional=True),
            ))
        except DataError as exc:
            if str(exc).startswith(str(path)):
                raise
            raise DataError(f"{path}:{lineno}: {exc}") from None
    _check_unique(docs, path, "tweet")
    return docs


def load_mists(path):
    mists = []
    for lineno, obj in read_jsonl(path):
        try:
            mists.append(MisTarget(
                _field(obj, "id", str, path, lineno),
                _field(obj, "text", str, path, lineno),
            ))
        except DataError as exc:
            if str(exc).startswith(str(path)):
                raise
            raise DataError(f"{path}:{lineno}: {exc}") from None
    _check_unique(mists, path, "target")
    return mists


def load_judgments(path, tweet_ids=None, mist_ids=None):
    """Load relevance judgments, optionally resolving ids against corpora."""
    out = []
    seen = set()
    for lineno, obj in read_jsonl(path):
        j = RelevanceJudgment(
            _field(obj, "tweet_id", str, path, lineno),
            _field(obj, "mist_id", str, path, lineno),
            _field(obj, "relevant", bool, path, lineno),
        )
        key = (j.tweet_id, j.mist_id)
        if key in seen:
            raise DataError(f"{path}:{lineno}: duplicate judgment for {key}")
        seen.add(key)
        if tweet_ids is not None and j.tweet_id not in tweet_ids:
            raise DataError(f"{path}:{lineno}: unknown tweet id {j.tweet_id!r}")
        if mist_ids is not None and j.mist_id not in mist_ids:
            raise DataError(f"{path}:{lineno}: unknown target id {j.mist_id!r}")
        out.append(j)
    return out


# --------------------------------------------------------------------------
# MinHash


def shingle(text):
    """Set of term trigrams; texts shorter than three tokens yield unigrams."""
    tokens = tokenize(text)
    if len(tokens) < 3:
        return set(tokens)
    return {" ".join(tokens[i:i + 3]) for i in range(len(tokens) - 2)}


@dataclass(frozen=True, eq=False)
class MinHashSignature:
    values: np.ndarray

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        return isinstance(other, MinHashSignature) and np.array_equal(self.values, other.values)

    def jaccard(self, other):
        """Fraction of agreeing minima: the MinHash Jaccard estimate."""
        if len(self) != len(other):
            raise ValueError("signatures have different permutation counts")
        return float(np.mean(self.values == other.values))


@lru_cache(maxsize=16)
def _permutation_params(seed, num_perm):
    # splitmix expansion of one seed into (odd multiplier, offset) pairs
    state = seed & 0xFFFFFFFFFFFFFFFF
    a = np.empty(num_perm, dtype=np.uint64)
    b = np.empty(num_perm, dtype=np.uint64)
    for i in range(num_perm):
        state, x = splitmix64(state)
        state, y = splitmix64(state)
        a[i] = x | 1
        b[i] = y
    return a, b


def _signature_array(shingles, seed, num_perm):
    if not shingles:
        raise EmptyDocument("cannot sign an empty shingle set")
    base = np.fromiter((hash64(s) for s in sorted(shingles)), dtype=np.uint64, count=len(shingles))
    a, b = _permutation_params(seed, num_perm)
    with np.errstate(over="ignore"):
        hashed = mix64(a[:, None] * base[None, :] + b[:, None])
    return hashed.min(axis=1)


def minhash(shingles, seed=0, num_perm=DEFAULT_PERMUTATIONS):
    """MinHash signature of a shingle set under ``num_perm`` seeded permutations."""
    return MinHashSignature(_signature_array(shingles, seed, num_perm))


def exact_jaccard(a, b):
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def dedup_corpus(docs, threshold=0.5, seed=0, num_perm=DEFAULT_PERMUTATIONS):
    """Greedy near-duplicate removal; the first occurrence wins.

    A document is dropped when its estimated Jaccard against any already
    retained document is at least ``threshold``. Order is preserved.
    Documents with no tokens cannot be signed; they are kept unless their
    exact text was already kept.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    kept = []
    sigs = np.empty((0, num_perm), dtype=np.uint64)
    rows = 0
    tokenless = set()
    seen = 0
    for doc in docs:
        seen += 1
        sh = shingle(doc.full_text)
        if not sh:
            if doc.full_text in tokenless:
                continue
            logger.warning("document %s has no tokens; kept unsigned", doc.id)
            tokenless.add(doc.full_text)
            kept.append(doc)
            continue
        sig = _signature_array(sh, seed, num_perm)
        if rows:
            est = (sigs[:rows] == sig).mean(axis=1)
            if est.max() >= threshold:
                continue
        if rows == len(sigs):
            sigs = np.vstack([sigs, np.empty((max(rows, 64), num_perm), dtype=np.uint64)])
        sigs[rows] = sig
        rows += 1
        kept.append(doc)
    logger.info("dedup kept %d of %d documents", len(kept), seen)
    return kept
