"""End-to-end orchestration: dedup, index, retrieve, split, build-graph,
train, calibrate, predict and eval, each writing its artifact to a work
directory.

Stages whose outputs already exist are skipped unless ``force`` is set. A
``manifest.json`` records the config hash, per-stage timings and metrics.
"""

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import (dedup_corpus, load_judgments, load_mists,
                     load_tweets, read_jsonl, write_jsonl)
from .encoder import HashedEncoder, PrecomputedEncoder, load_precomputed
from .errors import DataError, MistlinkError
from .eval import count, gold_sets, per_mist_report, write_report
from .kge import ModelKind
from .mkg import MisinfoKnowledgeGraph, phase1_extend, seed_fcgs
from .modelfile import load_model, save_model
from .predictor import (ALL, LinkScorer, calibrate, dev_scores, parse_mode,
                        predict)
from .retrieval import build_index, retrieve_candidates
from .trainer import TrainConfig, train

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
STAGES = ("dedup", "index", "retrieve", "split", "build-graph", "train",
          "calibrate", "predict", "eval")


class StageError(MistlinkError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


@dataclass
class PipelineConfig:
    tweets: str = "tweets.jsonl"
    mists: str = "mists.jsonl"
    judgments: str = "judgments.jsonl"
    workdir: str = "run"
    model: str = "transms"
    mode: str = "prototypical"
    seed: int = 0
    retrieval_k: int = 200
    dedup_threshold: float = 0.5
    permutations: int = 100
    split_fractions: tuple = (0.6, 0.2, 0.2)
    encoder: str = "hashed"
    features_dim: int = 4096
    embeddings_file: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        ModelKind.parse(self.model)
        parse_mode(self.mode)
        if self.encoder not in ("hashed", "precomputed"):
            raise ValueError("encoder must be 'hashed' or 'precomputed'")
        if self.encoder == "precomputed" and not self.embeddings_file:
            raise ValueError("the precomputed encoder needs embeddings_file")
        fr = tuple(float(x) for x in self.split_fractions)
        if len(fr) != 3 or min(fr) < 0 or not math.isclose(sum(fr), 1.0):
            raise ValueError("split_fractions must be three non-negative numbers summing to 1")
        self.split_fractions = fr
        # one seed drives every stochastic stage
        if self.train.seed != self.seed:
            self.train = TrainConfig.from_dict(dict(self.train.to_dict(), seed=self.seed))

    def to_dict(self):
        d = asdict(self)
        d["train"] = self.train.to_dict()
        d["split_fractions"] = list(self.split_fractions)
        return d

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def path(self, name):
        return Path(self.workdir) / name

    @classmethod
    def from_dict(cls, d, base_dir=None):
        """Build from a nested mapping as read from TOML.

        Tables ``[data]``, ``[retrieval]``, ``[dedup]``, ``[split]``,
        ``[encoder]`` and ``[train]`` are flattened; relative paths are taken
        relative to ``base_dir``.
        """
        d = dict(d)
        flat = {}
        for key in ("tweets", "mists", "judgments", "workdir", "embeddings_file"):
            if key in d.get("data", {}):
                flat[key] = d["data"][key]
        if "k" in d.get("retrieval", {}):
            flat["retrieval_k"] = d["retrieval"]["k"]
        dedup = d.get("dedup", {})
        if "threshold" in dedup:
            flat["dedup_threshold"] = dedup["threshold"]
        if "permutations" in dedup:
            flat["permutations"] = dedup["permutations"]
        split = d.get("split", {})
        if split:
            flat["split_fractions"] = tuple(split.get(s, 0.0) for s in SPLITS)
        enc = d.get("encoder", {})
        if "kind" in enc:
            flat["encoder"] = enc["kind"]
        if "dim" in enc:
            flat["features_dim"] = enc["dim"]
        if "embeddings_file" in enc:
            flat["embeddings_file"] = enc["embeddings_file"]
        for key in ("tweets", "mists", "judgments", "workdir", "model", "mode", "seed",
                    "retrieval_k", "dedup_threshold", "permutations", "encoder",
                    "features_dim", "embeddings_file"):
            if key in d and not isinstance(d[key], dict):
                flat[key] = d[key]
        if "train" in d:
            flat["train"] = TrainConfig.from_dict(d["train"])
        if base_dir is not None:
            for key in ("tweets", "mists", "judgments", "workdir", "embeddings_file"):
                if flat.get(key) and not os.path.isabs(flat[key]):
                    flat[key] = str(Path(base_dir) / flat[key])
        return cls(**flat)


def load_toml(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"{path}: invalid TOML ({exc})") from None


def load_config(path=None, overrides=None):
    """Config from an optional TOML file; non-None ``overrides`` win."""
    d, base = {}, None
    if path is not None:
        d = load_toml(path)
        base = Path(path).resolve().parent
    cfg = PipelineConfig.from_dict(d, base)
    if overrides:
        changes = {k: v for k, v in overrides.items() if v is not None}
        if changes:
            merged = dict(cfg.to_dict(), **changes)
            merged["train"] = TrainConfig.from_dict(merged["train"])
            cfg = PipelineConfig(**merged)
    return cfg


# --------------------------------------------------------------------------
# shared helpers (also used by the per-stage CLI commands)


def make_encoder(kind="hashed", dim=4096, embeddings_file=None):
    if kind == "precomputed":
        return PrecomputedEncoder(load_precomputed(embeddings_file), embeddings_file)
    return HashedEncoder(dim)


def encoder_from_config(enc_config, fallback=None):
    """Rebuild the encoder a model was trained with."""
    if not enc_config:
        return fallback or HashedEncoder()
    if enc_config.get("kind") == "precomputed":
        if fallback is not None and fallback.kind == "precomputed":
            return fallback
        return make_encoder("precomputed", embeddings_file=enc_config["path"])
    return HashedEncoder(enc_config.get("dim", 4096), enc_config.get("seed", 0))


def load_split_judgments(path, fractions=(0.6, 0.2, 0.2), seed=0, tweet_ids=None, mist_ids=None):
    """Judgments grouped by split.

    A ``"split"`` field on every line is honoured. Without it, tweets are
    shuffled with ``seed`` and cut by ``fractions``; all judgments of one
    tweet land in the same split.
    """
    judgments = load_judgments(path, tweet_ids, mist_ids)
    labels = [obj.get("split") for _, obj in read_jsonl(path)]
    if all(lab is not None for lab in labels):
        bad = sorted({lab for lab in labels} - set(SPLITS))
        if bad:
            raise DataError(f"{path}: unknown split labels {bad}")
        split_of = {}
        for j, lab in zip(judgments, labels):
            if split_of.setdefault(j.tweet_id, lab) != lab:
                raise DataError(f"{path}: tweet {j.tweet_id!r} appears in two splits")
    else:
        if any(lab is not None for lab in labels):
            logger.warning("%s: only some lines carry a split label; ignoring them", path)
        tweets = sorted({j.tweet_id for j in judgments})
        order = np.random.default_rng([seed, 4]).permutation(len(tweets))
        cuts = np.round(np.cumsum(fractions) * len(tweets)).astype(int)
        split_of = {}
        for rank, i in enumerate(order):
            split_of[tweets[i]] = SPLITS[int(np.searchsorted(cuts, rank, side="right"))]
    out = {s: [] for s in SPLITS}
    for j in judgments:
        out[split_of[j.tweet_id]].append(j)
    return out


def build_graph(dev, train_judgments, tweets=None, mists=None):
    mist_ids = [m.id for m in mists] if mists else None
    graph = seed_fcgs(dev, mist_ids)
    phase1_extend(graph, train_judgments)
    judged = {j.tweet_id for j in dev} | {j.tweet_id for j in train_judgments}
    if tweets is not None:
        graph.tweet_texts = {t.id: t.full_text for t in tweets if t.id in judged}
        missing = sorted(judged - set(graph.tweet_texts))
        if missing:
            raise DataError(f"judged tweets missing from the corpus: {missing[:5]}")
    if mists is not None:
        graph.mist_texts = {m.id: m.description for m in mists}
    return graph


def judged_tweets(judgments, texts):
    ids = sorted({j.tweet_id for j in judgments})
    missing = [t for t in ids if t not in texts]
    if missing:
        raise DataError(f"no text for judged tweets {missing[:5]}")
    return [(t, texts[t]) for t in ids]


def calibrate_model(model, graph, encoder, dev, mode):
    mode = parse_mode(mode)
    scorer = LinkScorer(model, graph, encoder)
    scores = dev_scores(scorer, judged_tweets(dev, graph.tweet_texts), mode)
    sizes = {m: graph.fcg_size(m) for m in graph.mists}
    model.thresholds = calibrate(scores, dev, mode, sizes if mode == ALL else None)
    model.mode = mode
    return model


def write_predictions(path, predictions):
    write_jsonl(path, [p.to_json() for p in predictions])


def read_predictions(path):
    out = {}
    for lineno, obj in read_jsonl(path):
        tid = obj.get("tweet_id")
        mists = obj.get("mists")
        if not isinstance(tid, str) or not isinstance(mists, list):
            raise DataError(f"{path}:{lineno}: expected 'tweet_id' and 'mists'")
        if tid in out:
            raise DataError(f"{path}:{lineno}: duplicate prediction for {tid!r}")
        out[tid] = set(mists)
    return out


def evaluate(pred_path, gold_judgments, graph, out_path):
    counts = count(read_predictions(pred_path), gold_sets(gold_judgments))
    report = per_mist_report(counts, graph)
    write_report(out_path, report, {"tp": counts.tp, "fp": counts.fp, "fn": counts.fn})
    return report


# --------------------------------------------------------------------------
# the run


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


class _Run:
    def __init__(self, cfg, force):
        self.cfg = cfg
        self.force = force
        self.timings = {}
        self.ran = []
        self._encoder = None
        self._tweets = None
        self._mists = None

    @property
    def encoder(self):
        if self._encoder is None:
            c = self.cfg
            self._encoder = make_encoder(c.encoder, c.features_dim, c.embeddings_file)
        return self._encoder

    def tweets(self):
        if self._tweets is None:
            self._tweets = load_tweets(self.cfg.path("deduped.jsonl"))
        return self._tweets

    def mists(self):
        if self._mists is None:
            self._mists = load_mists(self.cfg.mists)
        return self._mists

    def stage(self, name, outputs, fn):
        paths = [self.cfg.path(o) for o in outputs]
        if not self.force and all(p.exists() for p in paths):
            logger.info("stage %s: outputs present, skipped", name)
            return
        t0 = time.perf_counter()
        try:
            fn()
        except MistlinkError as exc:
            for p in paths:
                if p.exists():
                    p.unlink()
            raise StageError(name, exc) from exc
        self.timings[name] = round(time.perf_counter() - t0, 3)
        self.ran.append(name)
        logger.info("stage %s: %.2fs", name, self.timings[name])

    # stages ---------------------------------------------------------------

    def dedup(self):
        docs = load_tweets(self.cfg.tweets)
        kept = dedup_corpus(docs, self.cfg.dedup_threshold, self.cfg.seed, self.cfg.permutations)
        write_jsonl(self.cfg.path("deduped.jsonl"), [d.to_json() for d in kept])

    def index(self):
        idx = build_index(self.tweets())
        _write_json(self.cfg.path("index.json"), {
            "doc_count": idx.doc_count,
            "avg_doc_length": idx.avg_doc_length,
            "doc_lengths": idx.doc_lengths,
            "postings": {t: [list(p) for p in pl] for t, pl in idx.postings.items()},
        })

    def retrieve(self):
        from .retrieval import InvertedIndex

        obj = _read_json(self.cfg.path("index.json"))
        idx = InvertedIndex(
            {t: [tuple(p) for p in pl] for t, pl in obj["postings"].items()},
            obj["doc_lengths"], obj["avg_doc_length"], obj["doc_count"])
        rows = []
        for m in self.mists():
            for tid, score in retrieve_candidates(idx, m, self.cfg.retrieval_k):
                rows.append({"mist_id": m.id, "tweet_id": tid, "score": score})
        write_jsonl(self.cfg.path("candidates.jsonl"), rows)

    def split(self):
        kept = {t.id for t in self.tweets()}
        parts = load_split_judgments(self.cfg.judgments, self.cfg.split_fractions, self.cfg.seed,
                                     mist_ids={m.id for m in self.mists()})
        for name in SPLITS:
            rows = [j for j in parts[name] if j.tweet_id in kept]
            dropped = len(parts[name]) - len(rows)
            if dropped:
                logger.info("split %s: %d judgments on removed duplicates dropped", name, dropped)
            write_jsonl(self.cfg.path(f"{name}.jsonl"), [j.to_json() for j in rows])

    def split_judgments(self, name):
        return load_judgments(self.cfg.path(f"{name}.jsonl"))

    def build_graph(self):
        tweets = self.tweets()
        graph = build_graph(self.split_judgments("dev"), self.split_judgments("train"),
                            tweets, self.mists())
        # test texts ride along so later stages need only the graph file
        test = {j.tweet_id for j in self.split_judgments("test")}
        graph.tweet_texts.update({t.id: t.full_text for t in tweets if t.id in test})
        graph.save(self.cfg.path("graph.json"))

    def train(self):
        graph = MisinfoKnowledgeGraph.load(self.cfg.path("graph.json"))
        model = train(graph, self.encoder, self.cfg.model, self.cfg.train)
        save_model(self.cfg.path("model.bin"), model)

    def calibrate(self):
        graph = MisinfoKnowledgeGraph.load(self.cfg.path("graph.json"))
        model = load_model(self.cfg.path("model.bin"))
        calibrate_model(model, graph, self.encoder, self.split_judgments("dev"), self.cfg.mode)
        save_model(self.cfg.path("calibrated.bin"), model)

    def predict(self):
        graph = MisinfoKnowledgeGraph.load(self.cfg.path("graph.json"))
        model = load_model(self.cfg.path("calibrated.bin"))
        scorer = LinkScorer(model, graph, self.encoder)
        test = judged_tweets(self.split_judgments("test"), graph.tweet_texts)
        write_predictions(self.cfg.path("predictions.jsonl"),
                          predict(test, scorer, model.thresholds, model.mode))

    def eval(self):
        graph = MisinfoKnowledgeGraph.load(self.cfg.path("graph.json"))
        evaluate(self.cfg.path("predictions.jsonl"), self.split_judgments("test"), graph,
                 self.cfg.path("report.json"))

    def retrieval_recall(self):
        """Share of relevant judged pairs that BM25 pooling surfaced."""
        found = {(r["mist_id"], r["tweet_id"]) for _, r in read_jsonl(self.cfg.path("candidates.jsonl"))}
        relevant = set()
        for name in SPLITS:
            relevant |= {(j.mist_id, j.tweet_id) for j in self.split_judgments(name) if j.relevant}
        return len(found & relevant) / len(relevant) if relevant else 0.0


def run_pipeline(cfg, force=False):
    """Run every stage; returns the manifest dict."""
    Path(cfg.workdir).mkdir(parents=True, exist_ok=True)
    r = _Run(cfg, force)
    r.stage("dedup", ["deduped.jsonl"], r.dedup)
    r.stage("index", ["index.json"], r.index)
    r.stage("retrieve", ["candidates.jsonl"], r.retrieve)
    r.stage("split", [f"{s}.jsonl" for s in SPLITS], r.split)
    r.stage("build-graph", ["graph.json"], r.build_graph)
    r.stage("train", ["model.bin"], r.train)
    r.stage("calibrate", ["calibrated.bin"], r.calibrate)
    r.stage("predict", ["predictions.jsonl"], r.predict)
    r.stage("eval", ["report.json"], r.eval)

    manifest_path = cfg.path("manifest.json")
    if not r.ran and manifest_path.exists():
        return _read_json(manifest_path)
    report = _read_json(cfg.path("report.json"))
    model = load_model(cfg.path("model.bin"))
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "stages_run": r.ran,
        "timings": r.timings,
        "metrics": {
            "precision": report["precision"],
            "recall": report["recall"],
            "f1": report["f1"],
            "retrieval_recall": r.retrieval_recall(),
            "first_epoch_loss": model.loss_trace[0] if model.loss_trace else None,
            "last_epoch_loss": model.loss_trace[-1] if model.loss_trace else None,
        },
    }
    _write_json(manifest_path, manifest)
    return manifest
