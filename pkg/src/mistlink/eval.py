"""Multi-label evaluation: tp/fp/fn per (tweet, target) decision and micro metrics."""

import json
from dataclasses import dataclass, field

from .errors import DataError


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    per_mist: dict = field(default_factory=dict)  # mist -> [tp, fp, fn]

    def add(self, mist, tp=0, fp=0, fn=0):
        row = self.per_mist.setdefault(mist, [0, 0, 0])
        row[0] += tp
        row[1] += fp
        row[2] += fn
        self.tp += tp
        self.fp += fp
        self.fn += fn

    def for_mist(self, mist):
        tp, fp, fn = self.per_mist.get(mist, (0, 0, 0))
        return ConfusionCounts(tp, fp, fn)


@dataclass
class MetricReport:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False
    rows: list = field(default_factory=list)  # per-target dicts

    def to_json(self, scale=100.0):
        out = {
            "precision": self.precision * scale,
            "recall": self.recall * scale,
            "f1": self.f1 * scale,
            "degenerate": self.degenerate,
        }
        if self.rows:
            out["per_mist"] = [
                dict(r, precision=r["precision"] * scale, recall=r["recall"] * scale,
                     f1=r["f1"] * scale)
                for r in self.rows
            ]
        return out


def gold_sets(judgments):
    """tweet -> set of relevant targets; every judged tweet gets an entry."""
    gold = {}
    for j in judgments:
        s = gold.setdefault(j.tweet_id, set())
        if j.relevant:
            s.add(j.mist_id)
    return gold


def count(predictions, gold):
    """Accumulate counts; ``gold`` maps tweet id to its relevant target set.

    ``predictions`` is an iterable of objects with ``tweet_id`` and ``mists``
    or a ``{tweet: mists}`` mapping. Gold tweets without a prediction count
    as predicting nothing.
    """
    if isinstance(predictions, dict):
        predictions = predictions.items()
    else:
        predictions = ((p.tweet_id, p.mists) for p in predictions)
    predicted = {}
    for tid, mists in predictions:
        if tid not in gold:
            raise DataError(f"prediction for tweet {tid!r} which has no gold judgments")
        if tid in predicted:
            raise DataError(f"duplicate prediction for tweet {tid!r}")
        predicted[tid] = set(mists)

    c = ConfusionCounts()
    for tid in sorted(gold):
        rel = gold[tid]
        pred = predicted.get(tid, set())
        for m in sorted(pred | rel):
            c.add(m, tp=int(m in pred and m in rel), fp=int(m in pred and m not in rel),
                  fn=int(m in rel and m not in pred))
    return c


def f1_score(precision, recall):
    if precision + recall <= 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def micro_prf(counts):
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return MetricReport(p, r, f1_score(p, r), degenerate=(tp + fp == 0 or tp + fn == 0))


def per_mist_report(counts, graph=None, mists=None):
    """Micro metrics plus one row per target with its FCG size ``n_x``."""
    report = micro_prf(counts)
    ids = sorted(set(counts.per_mist) | set(mists or ()) | set(graph.mists if graph else ()))
    for m in ids:
        r = micro_prf(counts.for_mist(m))
        tp, fp, fn = counts.per_mist.get(m, (0, 0, 0))
        report.rows.append({
            "mist_id": m,
            "n_x": graph.fcg_size(m) if graph is not None and m in graph.mists else 0,
            "tp": tp, "fp": fp, "fn": fn,
            "precision": r.precision, "recall": r.recall, "f1": r.f1,
        })
    return report


def write_report(path, report, extra=None):
    obj = report.to_json()
    if extra:
        obj.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
