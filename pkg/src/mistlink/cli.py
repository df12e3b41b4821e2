"""Command-line entry point: one subcommand per stage plus ``run``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.
"""

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .baseline import bc_predict, bc_train
from .corpus import (dedup_corpus, load_judgments, load_mists, load_tweets,
                     read_jsonl, write_jsonl)
from .errors import DataError, MistlinkError, TrainingError
from .eval import count, gold_sets
from .mkg import MisinfoKnowledgeGraph
from .modelfile import load_model, save_model
from .pipeline import (build_graph, calibrate_model, encoder_from_config, evaluate,
                       load_config, load_toml, make_encoder, run_pipeline,
                       write_predictions)
from .predictor import LinkScorer, predict
from .retrieval import build_index, retrieve_candidates
from .trainer import TrainConfig, train

logger = logging.getLogger("mistlink")


class UsageError(MistlinkError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_encoder_flags(p):
    p.add_argument("--encoder", choices=["hashed", "precomputed"], default=None,
                   help="text feature extractor (default: the one stored in the model, else hashed)")
    p.add_argument("--features-dim", type=int, default=4096)
    p.add_argument("--embeddings-file", help="JSONL of {id, vector} for the precomputed encoder")


def _encoder(args, model=None):
    if args.encoder is None and model is not None:
        return encoder_from_config(model.encoder_config)
    kind = args.encoder or "hashed"
    if kind == "precomputed" and not args.embeddings_file:
        raise UsageError("--encoder precomputed needs --embeddings-file")
    return make_encoder(kind, args.features_dim, args.embeddings_file)


def _train_config(args):
    d = {}
    if args.config:
        d = load_toml(args.config)
        d = d.get("train", d if "data" not in d else {})
    if args.seed is not None:
        d = dict(d, seed=args.seed)
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training config: {exc}") from None


def _tweet_inputs(path, graph=None, corpus=None):
    """``(id, text)`` pairs from tweet records or from judgments plus a text source."""
    texts = {}
    if graph is not None:
        texts.update(graph.tweet_texts)
    if corpus:
        texts.update({t.id: t.full_text for t in load_tweets(corpus)})
    out, seen = [], set()
    for lineno, obj in read_jsonl(path):
        if "text" in obj and "id" in obj:
            tid = obj["id"]
            text = obj["text"] + (f" URL: {obj['url_title']}" if obj.get("url_title") else "")
        elif "tweet_id" in obj:
            tid = obj["tweet_id"]
            if tid not in texts:
                raise DataError(f"{path}:{lineno}: no text known for tweet {tid!r}")
            text = texts[tid]
        else:
            raise DataError(f"{path}:{lineno}: expected a tweet record or a judgment")
        if tid not in seen:
            seen.add(tid)
            out.append((tid, text))
    return out


# --------------------------------------------------------------------------
# commands


def cmd_dedup(args):
    docs = load_tweets(args.input)
    seed = args.seed if args.seed is not None else 0
    kept = dedup_corpus(docs, args.threshold, seed, args.permutations)
    write_jsonl(args.out, [d.to_json() for d in kept])
    print(f"kept {len(kept)} of {len(docs)} tweets")


def cmd_retrieve(args):
    index = build_index(load_tweets(args.index_from))
    rows = []
    for m in load_mists(args.mists):
        for tid, score in retrieve_candidates(index, m, args.k):
            rows.append({"mist_id": m.id, "tweet_id": tid, "score": score})
    write_jsonl(args.out, rows)
    print(f"wrote {len(rows)} candidates")


def cmd_build_graph(args):
    tweets = load_tweets(args.tweets) if args.tweets else None
    mists = load_mists(args.mists) if args.mists else None
    dev = load_judgments(args.dev)
    graph = build_graph(dev, load_judgments(args.train), tweets, mists)
    if tweets is not None and args.test:
        test = {j.tweet_id for j in load_judgments(args.test)}
        graph.tweet_texts.update({t.id: t.full_text for t in tweets if t.id in test})
    graph.save(args.out)
    print(f"graph: {len(graph.mists)} targets, {sum(graph.fcg_size(m) for m in graph.mists)} members")


def cmd_train(args):
    graph = MisinfoKnowledgeGraph.load(args.graph)
    model = train(graph, _encoder(args), args.model or "transms", _train_config(args))
    model.mode = args.mode
    save_model(args.out, model)
    trace = model.loss_trace
    if trace:
        print(f"loss {trace[0]:.4f} -> {trace[-1]:.4f} over {len(trace)} epochs")


def cmd_calibrate(args):
    graph = MisinfoKnowledgeGraph.load(args.graph)
    model = load_model(args.model_file)
    mode = args.mode or model.mode or "prototypical"
    calibrate_model(model, graph, _encoder(args, model), load_judgments(args.dev), mode)
    save_model(args.out or args.model_file, model)


def cmd_predict(args):
    graph = MisinfoKnowledgeGraph.load(args.graph)
    model = load_model(args.model_file)
    enc = _encoder(args, model)
    mode = args.mode or model.mode or "prototypical"
    if model.thresholds is None or model.mode != mode:
        if not args.dev:
            raise UsageError("model is not calibrated for this mode; pass --dev to calibrate first")
        calibrate_model(model, graph, enc, load_judgments(args.dev), mode)
    tweets = _tweet_inputs(args.tweets, graph, args.corpus)
    preds = predict(tweets, LinkScorer(model, graph, enc), model.thresholds, mode)
    write_predictions(args.out, preds)
    print(f"predicted {sum(len(p.mists) for p in preds)} links for {len(preds)} tweets")


def _pair_arrays(tweet_ids, graph, enc, relevant):
    mf = {m: enc.features(m, graph.mist_texts.get(m)) for m in graph.mists}
    tf, mfs, y = [], [], []
    for t in tweet_ids:
        f = enc.features(t, graph.tweet_texts.get(t))
        for m in graph.mists:
            tf.append(f)
            mfs.append(mf[m])
            y.append((t, m) in relevant)
    return np.array(tf), np.array(mfs), np.array(y)


def cmd_train_bc(args):
    graph = MisinfoKnowledgeGraph.load(args.graph)
    enc = _encoder(args)
    train_rel = {(t, m) for m in graph.mists for t in graph.members(m)}
    tf, mf, y = _pair_arrays(graph.train_tweets, graph, enc, train_rel)
    dev_j = load_judgments(args.dev)
    dev_ids = sorted({j.tweet_id for j in dev_j})
    dev = _pair_arrays(dev_ids, graph, enc, {(j.tweet_id, j.mist_id) for j in dev_j if j.relevant})
    model = bc_train(tf, mf, y, _train_config(args), enc.config(), dev)
    save_model(args.out, model)
    print(f"threshold {model.threshold:.6g}")


def cmd_predict_bc(args):
    graph = MisinfoKnowledgeGraph.load(args.graph)
    model = load_model(args.model_file)
    enc = _encoder(args, model)
    mists = {m: enc.features(m, graph.mist_texts.get(m)) for m in graph.mists}
    preds = [bc_predict(model, tid, enc.features(tid, text), mists)
             for tid, text in _tweet_inputs(args.tweets, graph, args.corpus)]
    write_predictions(args.out, preds)


def cmd_eval(args):
    gold = load_judgments(args.gold)
    graph = MisinfoKnowledgeGraph.load(args.graph) if args.graph else None
    if args.out:
        report = evaluate(args.pred, gold, graph, args.out)
    else:
        from .eval import per_mist_report
        from .pipeline import read_predictions
        report = per_mist_report(count(read_predictions(args.pred), gold_sets(gold)), graph)
    print(f"P {report.precision * 100:.1f}  R {report.recall * 100:.1f}  F1 {report.f1 * 100:.1f}")


def cmd_run(args):
    overrides = {"seed": args.seed, "model": args.model, "mode": args.mode,
                 "workdir": args.workdir}
    try:
        cfg = load_config(args.config, overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from None
    manifest = run_pipeline(cfg, force=args.force)
    print(json.dumps(manifest["metrics"], sort_keys=True))


# --------------------------------------------------------------------------
# parser


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--mode", choices=["all", "prototypical"], default=None)
    common.add_argument("--config", default=None, help="TOML config file")
    common.add_argument("-v", "--verbose", action="count", default=0)

    kind = _Parser(add_help=False)
    kind.add_argument("--model", default=None,
                      help="model kind: transe, transd, transms, tucker, knn")

    parser = _Parser(prog="mistlink", description=__doc__.splitlines()[0], parents=[common, kind])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("dedup", parents=[common], help="remove near-duplicate tweets")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--permutations", type=int, default=100)
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("retrieve", parents=[common], help="BM25 candidates per target")
    p.add_argument("--index-from", required=True)
    p.add_argument("--mists", required=True)
    p.add_argument("--k", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("build-graph", parents=[common], help="seed and extend the target cliques")
    p.add_argument("--dev", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", help="test judgments; their texts are stored for later stages")
    p.add_argument("--tweets", help="tweet corpus, to store texts in the graph")
    p.add_argument("--mists", help="target descriptions")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graph)

    for name, func, helptext in (("train", cmd_train, "train a link-prediction model"),
                                 ("train-bc", cmd_train_bc, "train the pairwise classifier")):
        p = sub.add_parser(name, parents=[common, kind], help=helptext)
        p.add_argument("--graph", required=True)
        if name == "train-bc":
            p.add_argument("--dev", required=True, help="dev judgments for the threshold")
        p.add_argument("--out", required=True)
        _add_encoder_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("calibrate", parents=[common], help="fit per-target thresholds on dev")
    p.add_argument("--model", dest="model_file", required=True, help="model file")
    p.add_argument("--graph", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--out", help="defaults to overwriting --model-file")
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_calibrate)

    for name, func in (("predict", cmd_predict), ("predict-bc", cmd_predict_bc)):
        p = sub.add_parser(name, parents=[common], help="predict targets for tweets")
        p.add_argument("--model", dest="model_file", required=True, help="model file")
        p.add_argument("--graph", required=True)
        p.add_argument("--tweets", required=True, help="tweet records or judgments")
        p.add_argument("--corpus", help="tweet corpus used to look up texts of judged tweets")
        if name == "predict":
            p.add_argument("--dev", help="dev judgments, to calibrate an uncalibrated model")
        p.add_argument("--out", required=True)
        _add_encoder_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", parents=[common], help="micro P/R/F1 of predictions")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--graph")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", parents=[common, kind], help="full pipeline from a config file")
    p.add_argument("--workdir", default=None)
    p.add_argument("--force", action="store_true", help="rerun stages whose outputs exist")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except MistlinkError as exc:
        print(f"mistlink: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"mistlink: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
