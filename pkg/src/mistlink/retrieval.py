"""BM25 inverted index and per-target candidate pooling."""

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .errors import EmptyCorpus
from .text import tokenize

K1 = 1.2
B = 0.75


@dataclass
class InvertedIndex:
    postings: dict = field(default_factory=dict)  # term -> [(doc_id, tf)]
    doc_lengths: dict = field(default_factory=dict)
    avg_doc_length: float = 0.0
    doc_count: int = 0

    def doc_freq(self, term):
        return len(self.postings.get(term, ()))

    def idf(self, term):
        n = self.doc_freq(term)
        return math.log(1.0 + (self.doc_count - n + 0.5) / (n + 0.5))

    def term_frequency(self, term, doc_id):
        for d, tf in self.postings.get(term, ()):
            if d == doc_id:
                return tf
        return 0


def build_index(docs):
    """Index documents by tokenizer output (text plus any linked title)."""
    docs = list(docs)
    if not docs:
        raise EmptyCorpus("cannot index an empty corpus")
    postings = defaultdict(list)
    lengths = {}
    for doc in docs:
        tokens = tokenize(doc.full_text)
        lengths[doc.id] = len(tokens)
        for term, tf in Counter(tokens).items():
            postings[term].append((doc.id, tf))
    for plist in postings.values():
        plist.sort()
    return InvertedIndex(
        postings=dict(postings),
        doc_lengths=lengths,
        avg_doc_length=sum(lengths.values()) / len(lengths),
        doc_count=len(lengths),
    )


def _term_weight(tf, doc_len, avg_len, k1, b):
    return tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc_len / avg_len))


def bm25_score(index, query_terms, doc_id, k1=K1, b=B):
    if doc_id not in index.doc_lengths:
        raise KeyError(f"unknown document {doc_id!r}")
    doc_len = index.doc_lengths[doc_id]
    score = 0.0
    for term in query_terms:
        tf = index.term_frequency(term, doc_id)
        if tf:
            score += index.idf(term) * _term_weight(tf, doc_len, index.avg_doc_length, k1, b)
    return score


def search(index, query_terms, k, k1=K1, b=B):
    """Top-k documents for a query, ties broken by doc id ascending."""
    scores = defaultdict(float)
    for term in query_terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for doc_id, tf in plist:
            scores[doc_id] += idf * _term_weight(
                tf, index.doc_lengths[doc_id], index.avg_doc_length, k1, b)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


def expand_query(mist):
    """Return ``(original, modified)`` token lists.

    The modified query swaps every COVID-19 mention (``covid-19``,
    ``covid 19``, ``covid19``) for ``coronavirus``.
    """
    original = tokenize(mist.description)
    modified = []
    i = 0
    while i < len(original):
        tok = original[i]
        if tok == "covid19":
            modified.append("coronavirus")
        elif tok == "covid" and i + 1 < len(original) and original[i + 1] == "19":
            modified.append("coronavirus")
            i += 1
        else:
            modified.append(tok)
        i += 1
    return original, modified


@dataclass
class RankedList:
    entries: list  # [(doc_id, score)], best first

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def doc_ids(self):
        return [d for d, _ in self.entries]


def retrieve_candidates(index, mist, k=200):
    """Pool the top-k of the original and the expanded query.

    A document found by both keeps its higher score. The pooled list is not
    truncated, so it holds at most ``2k`` entries (``k`` when the expansion
    changes nothing).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    original, modified = expand_query(mist)
    pooled = dict(search(index, original, k))
    if modified != original:
        for doc_id, score in search(index, modified, k):
            if score > pooled.get(doc_id, -math.inf):
                pooled[doc_id] = score
    return RankedList(sorted(pooled.items(), key=lambda kv: (-kv[1], kv[0])))
