"""Link prediction against the target cliques, plus threshold calibration.

Two decision rules are supported:

* ``all``: score the tweet against every member of FCG(x); predict x when
  at least ``N_x`` member scores exceed ``T_x``.
* ``prototypical``: score the tweet once against the centroid of FCG(x);
  predict x when that score exceeds ``T_x``.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyFCG
from .kge import ModelKind, link_score

logger = logging.getLogger(__name__)

ALL = "all"
PROTOTYPICAL = "prototypical"
MODES = (ALL, PROTOTYPICAL)


def parse_mode(mode):
    mode = str(mode).lower()
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


@dataclass
class ThresholdTable:
    score: dict = field(default_factory=dict)  # mist -> T_x
    count: dict = field(default_factory=dict)  # mist -> N_x (all mode)

    def to_json(self):
        return {m: {"T": self.score[m], "N": self.count.get(m, 1)} for m in sorted(self.score)}

    @classmethod
    def from_json(cls, obj):
        return cls({m: float(v["T"]) for m, v in obj.items()},
                   {m: int(v["N"]) for m, v in obj.items()})


@dataclass
class Prediction:
    tweet_id: str
    mists: set

    def to_json(self):
        return {"tweet_id": self.tweet_id, "mists": sorted(self.mists)}


class LinkScorer:
    """Holds frozen embeddings of FCG members, targets and prototypes.

    ``calls`` counts scoring-function evaluations (one per tweet/candidate
    pair), so prediction cost can be checked.
    """

    def __init__(self, model, graph, encoder):
        self.model = model
        self.graph = graph
        self.encoder = encoder
        self.kind = ModelKind.parse(model.kind)
        self.calls = 0
        self._member_ids = {}
        self._member_emb = {}
        self._mist_emb = {}
        self._prototype = {}
        for m in graph.mists:
            members = graph.members(m)
            self._member_ids[m] = list(members)
            if members:
                feats = np.stack([encoder.features(t, graph.tweet_texts.get(t)) for t in members])
                self._member_emb[m] = model.tweet_embedding(feats)
                self._prototype[m] = self._member_emb[m].mean(axis=0)
            if self.kind is not ModelKind.KNN:
                mf = encoder.features(m, graph.mist_texts.get(m))
                self._mist_emb[m] = model.mist_embedding(mf)

    def tweet_embedding(self, tweet_id, text):
        return self.model.tweet_embedding(self.encoder.features(tweet_id, text))

    def prototype(self, mist_id):
        if mist_id not in self._prototype:
            raise EmptyFCG(f"FCG({mist_id}) is empty")
        return self._prototype[mist_id]

    def member_scores(self, te, mist_id, exclude=None):
        """Scores of ``te`` against every member of FCG(mist), optionally leaving one out."""
        ids = self._member_ids.get(mist_id, [])
        if not ids:
            return np.empty(0)
        emb = self._member_emb[mist_id]
        if exclude is not None and exclude in ids:
            keep = np.array([t != exclude for t in ids])
            emb = emb[keep]
        self.calls += len(emb)
        return np.atleast_1d(link_score(self.kind, te, self._mist_emb.get(mist_id), emb, self.model.core))

    def prototype_score(self, te, mist_id):
        self.calls += 1
        return float(link_score(self.kind, te, self._mist_emb.get(mist_id),
                                self.prototype(mist_id), self.model.core))


def compute_prototype(graph, model, mist_id, encoder):
    """Mean tweet embedding over the members of FCG(mist_id)."""
    members = graph.members(mist_id)
    if not members:
        raise EmptyFCG(f"FCG({mist_id}) is empty")
    feats = np.stack([encoder.features(t, graph.tweet_texts.get(t)) for t in members])
    return model.tweet_embedding(feats).mean(axis=0)


def predict_all(tweet_id, text, scorer, thresholds):
    te = scorer.tweet_embedding(tweet_id, text)
    out = set()
    for m in scorer.graph.mists:
        if m not in thresholds.score:
            continue
        scores = scorer.member_scores(te, m)
        if scores.size and np.count_nonzero(scores > thresholds.score[m]) >= thresholds.count.get(m, 1):
            out.add(m)
    return Prediction(tweet_id, out)


def predict_prototypical(tweet_id, text, scorer, thresholds):
    te = scorer.tweet_embedding(tweet_id, text)
    out = set()
    for m in scorer.graph.mists:
        if m not in thresholds.score or scorer.graph.fcg_size(m) == 0:
            continue
        if scorer.prototype_score(te, m) > thresholds.score[m]:
            out.add(m)
    return Prediction(tweet_id, out)


def predict(tweets, scorer, thresholds, mode):
    """Predict every ``(tweet_id, text)``; returns predictions in input order."""
    fn = predict_all if parse_mode(mode) == ALL else predict_prototypical
    return [fn(tid, text, scorer, thresholds) for tid, text in tweets]


# --------------------------------------------------------------------------
# calibration


def dev_scores(scorer, dev_tweets, mode):
    """Scores of each dev tweet against each target.

    Returns ``{mist: {tweet: scores}}`` where scores is a 1-d array of member
    scores (``all``; the tweet itself is left out of its own FCG) or a
    float (``prototypical``).
    """
    mode = parse_mode(mode)
    out = {m: {} for m in scorer.graph.mists}
    for tid, text in dev_tweets:
        te = scorer.tweet_embedding(tid, text)
        for m in scorer.graph.mists:
            if scorer.graph.fcg_size(m) == 0:
                continue
            if mode == ALL:
                out[m][tid] = scorer.member_scores(te, m, exclude=tid)
            else:
                out[m][tid] = scorer.prototype_score(te, m)
    return out


def f1_from_counts(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def candidate_thresholds(values):
    """Midpoints between sorted distinct values, bracketed by -inf and +inf."""
    v = np.unique(np.asarray(values, dtype=float))
    v = v[np.isfinite(v)]
    mids = (v[:-1] + v[1:]) / 2.0 if v.size > 1 else np.empty(0)
    return np.concatenate([[-math.inf], mids, [math.inf]])


def f1_grid(scores_by_tweet, relevant, max_n):
    """Dev F1 for every (candidate T, N) pair.

    Returns ``(candidates, f1)`` where ``f1[c, n - 1]`` is the F1 obtained by
    predicting a tweet when at least ``n`` of its scores exceed
    ``candidates[c]``.
    """
    tweets = sorted(scores_by_tweet)
    rel_mask = np.array([t in relevant for t in tweets], dtype=bool)
    arrays = [np.sort(np.atleast_1d(np.asarray(scores_by_tweet[t], dtype=float))) for t in tweets]
    cands = candidate_thresholds(np.concatenate(arrays) if arrays else np.empty(0))
    # counts[c, j] = number of scores of tweet j strictly above candidate c
    counts = np.zeros((cands.size, len(arrays)), dtype=np.int64)
    for j, a in enumerate(arrays):
        counts[:, j] = a.size - np.searchsorted(a, cands, side="right")
    width = max_n + 2
    at_least = {}
    for label, mask in (("rel", rel_mask), ("non", ~rel_mask)):
        sub = np.minimum(counts[:, mask], width - 1)
        flat = (np.arange(cands.size)[:, None] * width + sub).ravel()
        h = np.bincount(flat, minlength=cands.size * width).reshape(cands.size, width)
        at_least[label] = np.cumsum(h[:, ::-1], axis=1)[:, ::-1]
    tp = at_least["rel"][:, 1:max_n + 1]
    fp = at_least["non"][:, 1:max_n + 1]
    fn = len(relevant) - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    return cands, f1


def _select(cands, f1, tie_break="margin"):
    """Pick ``(T, N, F1)`` among the F1-optimal cells of :func:`f1_grid`.

    ``strict`` takes the largest T, then the smallest N. ``margin`` takes the
    smallest N, then the midpoint of the widest contiguous run of optimal
    thresholds, which keeps T away from the nearest dev positive.
    """
    best = float(f1.max())
    if best == 0.0:
        return math.inf, 1, 0.0
    if tie_break == "strict":
        rows, cols = np.nonzero(f1 == best)
        c = rows.max()
        return float(cands[c]), int(cols[rows == c].min()) + 1, best
    if tie_break != "margin":
        raise ValueError(f"unknown tie_break {tie_break!r}")
    n_idx = int(np.flatnonzero((f1 == best).any(axis=0))[0])
    opt = np.flatnonzero(f1[:, n_idx] == best)
    runs = np.split(opt, np.flatnonzero(np.diff(opt) > 1) + 1)
    finite = cands[np.isfinite(cands)]
    floor = finite.min() if finite.size else 0.0

    def width(run):
        lo, hi = cands[run[0]], cands[run[-1]]
        return (hi - max(lo, floor), hi)

    run = max(runs, key=width)
    lo, hi = cands[run[0]], cands[run[-1]]
    t = lo if math.isinf(lo) else (lo + hi) / 2.0
    return float(t), n_idx + 1, best


def calibrate(dev_predscores, dev_judgments, option, fcg_sizes=None, tie_break="margin"):
    """Per-target thresholds maximizing dev F1.

    ``dev_predscores`` is the output of :func:`dev_scores`. For ``all`` the
    count threshold ranges over ``1..|FCG(x)|`` (``fcg_sizes`` gives
    ``|FCG(x)|``; defaults to the longest score list seen).
    """
    option = parse_mode(option)
    relevant = {}
    for j in dev_judgments:
        if j.relevant:
            relevant.setdefault(j.mist_id, set()).add(j.tweet_id)
    table = ThresholdTable()
    for m, by_tweet in dev_predscores.items():
        rel = relevant.get(m, set()) & set(by_tweet)
        if not by_tweet:
            continue
        if not rel:
            logger.warning("target %s has no relevant dev tweets; it will never be predicted", m)
            table.score[m], table.count[m] = math.inf, 1
            continue
        if option == ALL:
            max_n = (fcg_sizes or {}).get(m) or max(np.size(s) for s in by_tweet.values())
            max_n = max(int(max_n), 1)
        else:
            max_n = 1
        cands, f1 = f1_grid(by_tweet, rel, max_n)
        t, n, _ = _select(cands, f1, tie_break)
        table.score[m], table.count[m] = t, n
    return table
