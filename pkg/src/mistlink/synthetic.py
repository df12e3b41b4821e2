"""Planted synthetic corpora with known ground truth.

Each target gets its own vocabulary, disjoint from every other target's;
relevant tweets mix target words with a shared background vocabulary,
irrelevant tweets use background words only.
"""

from dataclasses import dataclass

import numpy as np

from .corpus import MisTarget, RelevanceJudgment, TweetDoc

_LETTERS = list("abcdefghijklmnopqrstuvwxyz")


def _words(rng, n, used):
    out = []
    while len(out) < n:
        w = "".join(rng.choice(_LETTERS, size=int(rng.integers(4, 9))))
        if w not in used:
            used.add(w)
            out.append(w)
    return out


@dataclass
class PlantedCorpus:
    tweets: list
    mists: list
    judgments: list
    split_of: dict  # tweet_id -> "train" | "dev" | "test"

    def split(self, name):
        return [j for j in self.judgments if self.split_of[j.tweet_id] == name]

    def judgment_records(self):
        return [dict(j.to_json(), split=self.split_of[j.tweet_id]) for j in self.judgments]


def planted_corpus(n_targets=5, per_target=(50, 10, 20), n_irrelevant=100,
                   irrelevant_split=(0.6, 0.2, 0.2), target_vocab=20, background_vocab=200,
                   words_per_tweet=(8, 14), target_share=0.8, seed=0):
    """Build the corpus; ``per_target`` gives (train, dev, test) relevant tweets."""
    rng = np.random.default_rng(seed)
    used = set()
    background = _words(rng, background_vocab, used)
    vocabs = [_words(rng, target_vocab, used) for _ in range(n_targets)]
    mists = [MisTarget(f"m{i}", " ".join(rng.choice(v, size=8, replace=False)))
             for i, v in enumerate(vocabs)]

    tweets, judgments, split_of = [], [], {}

    def make_text(vocab):
        n = int(rng.integers(words_per_tweet[0], words_per_tweet[1] + 1))
        words = [rng.choice(vocab) if vocab is not None and rng.random() < target_share
                 else rng.choice(background) for _ in range(n)]
        return " ".join(words)

    names = ("train", "dev", "test")
    for i, vocab in enumerate(vocabs):
        for split, count in zip(names, per_target):
            for k in range(count):
                tid = f"t{i}_{split}_{k}"
                tweets.append(TweetDoc(tid, make_text(vocab)))
                judgments.append(RelevanceJudgment(tid, mists[i].id, True))
                split_of[tid] = split
    bounds = np.cumsum(np.array(irrelevant_split) * n_irrelevant).round().astype(int)
    for k in range(n_irrelevant):
        split = names[int(np.searchsorted(bounds, k, side="right"))]
        tid = f"x_{split}_{k}"
        tweets.append(TweetDoc(tid, make_text(None)))
        judgments.append(RelevanceJudgment(tid, mists[int(rng.integers(n_targets))].id, False))
        split_of[tid] = split
    return PlantedCorpus(tweets, mists, judgments, split_of)


def write_planted(directory, corpus=None, **kwargs):
    """Write tweets/mists/judgments JSONL files (judgments carry a split label)."""
    from pathlib import Path

    from .corpus import write_jsonl

    corpus = corpus or planted_corpus(**kwargs)
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_jsonl(d / "tweets.jsonl", [t.to_json() for t in corpus.tweets])
    write_jsonl(d / "mists.jsonl", [m.to_json() for m in corpus.mists])
    write_jsonl(d / "judgments.jsonl", corpus.judgment_records())
    return {name: str(d / f"{name}.jsonl") for name in ("tweets", "mists", "judgments")}
