"""Misinformation knowledge graph: per-target cliques over tweets.

Each target owns a fully-connected graph (FCG) of the tweets relevant to
it. Edges are never stored explicitly; ``(a, m, b)`` is an edge exactly
when ``a != b`` and both are members of FCG(m). This keeps the clique
invariant true by construction and avoids the quadratic edge list.
"""

import json
import logging
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

GRAPH_FORMAT_VERSION = 1

SEED = "dev"
TRAIN = "train"


@dataclass(frozen=True)
class LinkTriple:
    head: str
    relation: str
    tail: str

    def __post_init__(self):
        if self.head == self.tail:
            raise ValueError("a link cannot join a tweet to itself")


@dataclass
class DataSplit:
    train: list
    dev: list
    test: list

    def __post_init__(self):
        seen = {}
        for name in ("train", "dev", "test"):
            for j in getattr(self, name):
                key = (j.tweet_id, j.mist_id)
                if key in seen and seen[key] != name:
                    raise DataError(f"pair {key} appears in both {seen[key]} and {name}")
                seen[key] = name


@dataclass
class MisinfoKnowledgeGraph:
    mists: list = field(default_factory=list)
    fcg_members: dict = field(default_factory=dict)  # mist -> [tweet ids] in insertion order
    member_origin: dict = field(default_factory=dict)  # (mist, tweet) -> SEED | TRAIN
    unconnected: set = field(default_factory=set)
    train_tweets: list = field(default_factory=list)  # V_T, first-seen order
    tweet_texts: dict = field(default_factory=dict)
    mist_texts: dict = field(default_factory=dict)
    _member_sets: dict = field(default_factory=dict, repr=False)

    # -- structure ---------------------------------------------------------

    def _ensure_mist(self, mist_id):
        if mist_id not in self.fcg_members:
            self.mists.append(mist_id)
            self.fcg_members[mist_id] = []
            self._member_sets[mist_id] = set()

    @property
    def nodes(self):
        out = set(self.unconnected)
        for members in self.fcg_members.values():
            out.update(members)
        return out

    def members(self, mist_id):
        return self.fcg_members.get(mist_id, [])

    def is_member(self, tweet_id, mist_id):
        return tweet_id in self._member_sets.get(mist_id, ())

    def fcg_size(self, mist_id):
        return len(self.fcg_members.get(mist_id, ()))

    def has_edge(self, head, mist_id, tail):
        return head != tail and self.is_member(head, mist_id) and self.is_member(tail, mist_id)

    def __contains__(self, triple):
        return self.has_edge(triple.head, triple.relation, triple.tail)

    def edge_count(self, mist_id=None):
        if mist_id is None:
            return sum(comb(len(m), 2) for m in self.fcg_members.values())
        return comb(self.fcg_size(mist_id), 2)

    def edges(self, mist_id=None):
        """Yield each undirected edge once, later-inserted member as head."""
        mists = self.mists if mist_id is None else [mist_id]
        for m in mists:
            members = self.fcg_members[m]
            for i, head in enumerate(members):
                for tail in members[:i]:
                    yield LinkTriple(head, m, tail)

    def add_member(self, tweet_id, mist_id, origin):
        """Add a tweet to FCG(mist); returns the number of new edges."""
        self._ensure_mist(mist_id)
        if tweet_id in self._member_sets[mist_id]:
            return 0
        new_edges = len(self.fcg_members[mist_id])
        self.fcg_members[mist_id].append(tweet_id)
        self._member_sets[mist_id].add(tweet_id)
        self.member_origin[(mist_id, tweet_id)] = origin
        self.unconnected.discard(tweet_id)
        return new_edges

    def _mark_unconnected(self, tweet_id):
        if not any(tweet_id in s for s in self._member_sets.values()):
            self.unconnected.add(tweet_id)

    def connected_tweets(self):
        out = set()
        for members in self.fcg_members.values():
            out.update(members)
        return out

    # -- serialization -----------------------------------------------------

    def to_json(self):
        return {
            "version": GRAPH_FORMAT_VERSION,
            "mists": [{"id": m, "text": self.mist_texts.get(m)} for m in self.mists],
            "fcgs": {
                m: [{"tweet_id": t, "origin": self.member_origin[(m, t)]} for t in self.fcg_members[m]]
                for m in self.mists
            },
            "unconnected": sorted(self.unconnected),
            "train_tweets": list(self.train_tweets),
            "tweets": {t: self.tweet_texts[t] for t in sorted(self.tweet_texts)},
        }

    @classmethod
    def from_json(cls, obj):
        if obj.get("version") != GRAPH_FORMAT_VERSION:
            raise DataError(f"unsupported graph format version {obj.get('version')!r}")
        g = cls()
        for m in obj["mists"]:
            g._ensure_mist(m["id"])
            if m.get("text") is not None:
                g.mist_texts[m["id"]] = m["text"]
        for m, members in obj["fcgs"].items():
            for rec in members:
                g.add_member(rec["tweet_id"], m, rec["origin"])
        g.unconnected = set(obj["unconnected"])
        g.train_tweets = list(obj["train_tweets"])
        g.tweet_texts = dict(obj["tweets"])
        return g

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, ensure_ascii=False, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{exc.lineno}: invalid graph JSON ({exc.msg})") from None
        return cls.from_json(obj)


# --------------------------------------------------------------------------
# Bootstrapping


def seed_fcgs(dev_judgments, mist_ids=None):
    """Build seed cliques from the development judgments.

    Every dev tweet judged relevant to a target joins that target's FCG;
    dev tweets relevant to nothing stay unconnected. Targets listed in
    ``mist_ids`` but without relevant dev tweets get an empty FCG.
    """
    g = MisinfoKnowledgeGraph()
    for m in mist_ids or ():
        g._ensure_mist(m)
    for j in dev_judgments:
        g._ensure_mist(j.mist_id)
        if j.relevant:
            g.add_member(j.tweet_id, j.mist_id, SEED)
    for j in dev_judgments:
        if not j.relevant:
            g._mark_unconnected(j.tweet_id)
    for m in g.mists:
        if not g.fcg_members[m]:
            logger.warning("target %s has no relevant dev tweets; its seed FCG is empty", m)
    return g


def phase1_extend(graph, train_judgments):
    """Attach training tweets to the seed cliques, in judgment order.

    Mutates and returns ``graph``. Also records the training tweet
    population used for negative sampling.
    """
    known = set(graph.train_tweets)
    for j in train_judgments:
        if j.tweet_id not in known:
            known.add(j.tweet_id)
            graph.train_tweets.append(j.tweet_id)
        if j.relevant:
            graph.add_member(j.tweet_id, j.mist_id, TRAIN)
        else:
            graph._ensure_mist(j.mist_id)
    for j in train_judgments:
        if not j.relevant:
            graph._mark_unconnected(j.tweet_id)
    return graph


def training_triples(graph, per_link_cap=10, seed=0):
    """Positive triples ``(t, m, t_k)`` for every training-added member t.

    ``t_k`` ranges over the members present in FCG(m) before t was
    inserted, subsampled without replacement to ``per_link_cap``
    (``None`` means no cap).
    """
    rng = np.random.default_rng(seed)
    out = []
    for m in graph.mists:
        members = graph.fcg_members[m]
        for pos, t in enumerate(members):
            if graph.member_origin[(m, t)] != TRAIN:
                continue
            if pos == 0:
                logger.debug("training tweet %s opened an empty FCG(%s); no triples", t, m)
                continue
            prior = members[:pos]
            if per_link_cap is None or per_link_cap >= len(prior):
                chosen = prior
            else:
                idx = rng.choice(len(prior), size=per_link_cap, replace=False)
                chosen = [prior[i] for i in sorted(idx)]
            out.extend(LinkTriple(t, m, tk) for tk in chosen)
    return out
