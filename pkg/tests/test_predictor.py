import copy
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mistlink.corpus import RelevanceJudgment as J
from mistlink.encoder import PrecomputedEncoder, ProjectionEncoder
from mistlink.errors import EmptyFCG
from mistlink.kge import ModelKind, link_score
from mistlink.mkg import MisinfoKnowledgeGraph
from mistlink.predictor import (LinkScorer, ThresholdTable, calibrate, compute_prototype,
                                dev_scores, f1_grid, predict, predict_all,
                                predict_prototypical)
from mistlink.trainer import KgeModel, TrainConfig


def _setup(kind, fcgs, vectors, mist_w=None, rng=None):
    """Graph with the given cliques; features are the embeddings (identity projection)."""
    kind = ModelKind.parse(kind)
    g = MisinfoKnowledgeGraph()
    for m, members in fcgs.items():
        g._ensure_mist(m)
        for t in members:
            g.add_member(t, m, "dev")
    d = kind.tweet_dim
    enc = PrecomputedEncoder({k: np.asarray(v, float) for k, v in vectors.items()})
    tweet = ProjectionEncoder(np.eye(d), np.zeros(d))
    mist = None
    if kind.mist_dim:
        w = mist_w if mist_w is not None else (rng.normal(size=(kind.mist_dim, d)) if rng is not None
                                               else np.zeros((kind.mist_dim, d)))
        mist = ProjectionEncoder(w, np.zeros(kind.mist_dim))
    core = rng.normal(size=(8, 8, 8)) if kind is ModelKind.TUCKER else None
    model = KgeModel(kind, tweet, mist, core, {}, TrainConfig())
    return g, enc, model


def _vec(rng, n, d=8, prefix="t"):
    return {f"{prefix}{i}": rng.normal(size=d) for i in range(n)}


# -- prototypes -----------------------------------------------------------------


def test_prototype_examples(rng):
    v = rng.normal(size=8)
    vecs = {"a": v, "b": -v, "c": 2 * v, "m": np.ones(8), "n": np.ones(8)}
    g, enc, model = _setup("transe", {"m": ["c"], "n": ["a", "b"]}, vecs)
    assert np.allclose(compute_prototype(g, model, "m", enc), 2 * v)
    assert np.allclose(compute_prototype(g, model, "n", enc), 0.0)
    g._ensure_mist("empty")
    with pytest.raises(EmptyFCG):
        compute_prototype(g, model, "empty", enc)


def test_prototype_matches_naive_mean(rng):
    vecs = _vec(rng, 30)
    vecs["m"] = rng.normal(size=8)
    g, enc, model = _setup("transe", {"m": list(_vec(rng, 30))}, vecs)
    naive = sum(vecs[f"t{i}"] for i in range(30)) / 30
    assert np.allclose(compute_prototype(g, model, "m", enc), naive, atol=1e-12)
    assert np.allclose(LinkScorer(model, g, enc).prototype("m"), naive, atol=1e-12)


# -- decision rules ----------------------------------------------------------------


def test_empty_fcg_never_predicted(rng):
    vecs = _vec(rng, 3)
    vecs.update(m=np.zeros(8), e=np.zeros(8))
    g, enc, model = _setup("transe", {"m": ["t0", "t1"], "e": []}, vecs)
    sc = LinkScorer(model, g, enc)
    th = ThresholdTable({"m": -math.inf, "e": -math.inf}, {"m": 1, "e": 1})
    assert predict_all("t2", None, sc, th).mists == {"m"}
    assert predict_prototypical("t2", None, sc, th).mists == {"m"}


def test_scores_below_threshold_not_predicted(rng):
    vecs = _vec(rng, 3)
    vecs["m"] = np.zeros(8)
    g, enc, model = _setup("transe", {"m": ["t0", "t1"]}, vecs)
    sc = LinkScorer(model, g, enc)
    th = ThresholdTable({"m": 0.0}, {"m": 1})  # TransE scores are <= 0
    assert predict_all("t2", None, sc, th).mists == set()


@pytest.mark.parametrize("kind", list(ModelKind), ids=lambda k: k.value)
def test_all_rule_matches_recount(kind, rng):
    kind = ModelKind.parse(kind)
    d = kind.tweet_dim
    vecs = _vec(rng, 25, d)
    fcgs = {f"m{j}": [f"t{i}" for i in rng.choice(20, size=int(rng.integers(1, 8)), replace=False)]
            for j in range(4)}
    vecs.update({m: rng.normal(size=d) for m in fcgs})
    g, enc, model = _setup(kind, fcgs, vecs, rng=rng)
    sc = LinkScorer(model, g, enc)
    me = {m: model.mist_embedding(vecs[m]) for m in fcgs}
    for trial in range(20):
        T = {m: float(rng.normal(-3, 2)) for m in fcgs}
        N = {m: int(rng.integers(1, len(fcgs[m]) + 1)) for m in fcgs}
        th = ThresholdTable(T, N)
        for t in ("t20", "t21", "t22"):
            got = predict_all(t, None, sc, th).mists
            want = set()
            for m, members in fcgs.items():
                cnt = sum(link_score(kind, vecs[t], me[m], vecs[k], model.core) > T[m] for k in members)
                if cnt >= N[m]:
                    want.add(m)
            assert got == want


def test_prototypical_strict_inequality(rng):
    vecs = {"a": rng.normal(size=8), "m": np.zeros(8)}
    vecs["q"] = vecs["a"].copy()
    g, enc, model = _setup("transe", {"m": ["a"]}, vecs)
    sc = LinkScorer(model, g, enc)
    # prototype equals the tweet, me = 0: score is exactly 0
    assert sc.prototype_score(model.tweet_embedding(vecs["q"]), "m") == 0.0
    assert predict_prototypical("q", None, sc, ThresholdTable({"m": 0.0})).mists == set()
    assert predict_prototypical("q", None, sc, ThresholdTable({"m": -1e-9})).mists == {"m"}


@pytest.mark.parametrize("kind", list(ModelKind), ids=lambda k: k.value)
def test_singleton_fcgs_make_rules_agree(kind, rng):
    kind = ModelKind.parse(kind)
    d = kind.tweet_dim
    vecs = _vec(rng, 20, d)
    fcgs = {f"m{j}": [f"t{j}"] for j in range(5)}
    vecs.update({m: rng.normal(size=d) for m in fcgs})
    g, enc, model = _setup(kind, fcgs, vecs, rng=rng)
    sc = LinkScorer(model, g, enc)
    for _ in range(10):
        th = ThresholdTable({m: float(rng.normal(-3, 2)) for m in fcgs}, {m: 1 for m in fcgs})
        for t in [f"t{i}" for i in range(5, 20)]:
            assert predict_all(t, None, sc, th).mists == predict_prototypical(t, None, sc, th).mists


def test_call_counts_and_no_mutation(rng):
    vecs = _vec(rng, 30)
    fcgs = {"a": ["t0", "t1", "t2"], "b": ["t3"], "c": ["t4", "t5"], "e": []}
    vecs.update({m: rng.normal(size=8) for m in fcgs})
    g, enc, model = _setup("transms", fcgs, vecs, mist_w=rng.normal(size=(9, 8)))
    before = copy.deepcopy(g.to_json())
    sc = LinkScorer(model, g, enc)
    th = ThresholdTable({m: -1.0 for m in fcgs}, {m: 1 for m in fcgs})
    tweets = [(f"t{i}", None) for i in range(10, 20)]
    predict(tweets, sc, th, "prototypical")
    assert sc.calls == 3 * len(tweets)  # one per non-empty FCG
    sc.calls = 0
    first = predict(tweets, sc, th, "all")
    assert sc.calls == 6 * len(tweets)  # sum of FCG sizes
    assert g.to_json() == before
    assert [p.mists for p in predict(tweets, sc, th, "all")] == [p.mists for p in first]


@given(st.integers(0, 2**32), st.floats(-5, 0), st.floats(0, 3))
def test_raising_threshold_never_adds(seed, t, delta):
    rng = np.random.default_rng(seed)
    vecs = _vec(rng, 12)
    fcgs = {"a": ["t0", "t1", "t2"], "b": ["t3", "t4"]}
    vecs.update({m: rng.normal(size=8) for m in fcgs})
    g, enc, model = _setup("transe", fcgs, vecs, mist_w=rng.normal(size=(8, 8)))
    sc = LinkScorer(model, g, enc)
    for mode in ("all", "prototypical"):
        lo = ThresholdTable({"a": t, "b": t}, {"a": 1, "b": 2})
        hi = ThresholdTable({"a": t + delta, "b": t + delta}, {"a": 1, "b": 2})
        for tid in ("t8", "t9", "t10"):
            p_lo = predict([(tid, None)], sc, lo, mode)[0].mists
            p_hi = predict([(tid, None)], sc, hi, mode)[0].mists
            assert p_hi <= p_lo


# -- calibration ----------------------------------------------------------------


def brute_f1(scores_by_tweet, relevant, T, N):
    tp = fp = 0
    for t, s in scores_by_tweet.items():
        hit = np.sum(np.atleast_1d(s) > T) >= N
        tp += hit and t in relevant
        fp += hit and t not in relevant
    fn = len(relevant) - tp
    return 2 * tp / (2 * tp + fp + fn) if tp else 0.0


def brute_grid(scores_by_tweet):
    vals = sorted({float(x) for s in scores_by_tweet.values() for x in np.atleast_1d(s)})
    return [-math.inf] + [(a + b) / 2 for a, b in zip(vals, vals[1:])] + [math.inf]


def _random_dev(rng, mode, n_tweets=25, fcg=6):
    by_tweet, rel = {}, set()
    for i in range(n_tweets):
        t = f"d{i}"
        relevant = rng.random() < 0.4
        shift = 1.0 if relevant else 0.0
        if mode == "all":
            by_tweet[t] = np.round(rng.normal(shift, 1.0, size=fcg), 1)
        else:
            by_tweet[t] = float(np.round(rng.normal(shift, 1.0), 1))
        if relevant:
            rel.add(t)
    if not rel:
        rel.add("d0")
    return by_tweet, rel


@pytest.mark.parametrize("mode", ["all", "prototypical"])
@pytest.mark.parametrize("tie_break", ["margin", "strict"])
def test_calibration_optimal_on_exhaustive_grid(mode, tie_break, rng):
    for _ in range(100):
        by_tweet, rel = _random_dev(rng, mode)
        judg = [J(t, "m", t in rel) for t in by_tweet]
        max_n = 6 if mode == "all" else 1
        table = calibrate({"m": by_tweet}, judg, mode, {"m": max_n}, tie_break=tie_break)
        T, N = table.score["m"], table.count["m"]
        assert 1 <= N <= max_n
        chosen = brute_f1(by_tweet, rel, T, N)
        best = max(brute_f1(by_tweet, rel, t, n)
                   for t in brute_grid(by_tweet) for n in range(1, max_n + 1))
        assert chosen >= best


def test_strict_tie_break_prefers_larger_threshold_then_smaller_count(rng):
    for _ in range(50):
        by_tweet, rel = _random_dev(rng, "all", fcg=4)
        cands, f1 = f1_grid(by_tweet, rel, 4)
        table = calibrate({"m": by_tweet}, [J(t, "m", t in rel) for t in by_tweet], "all",
                          {"m": 4}, tie_break="strict")
        best = f1.max()
        optimal = [(c, n) for c in range(len(cands)) for n in range(1, 5) if f1[c, n - 1] == best]
        c_max = max(c for c, _ in optimal)
        assert table.score["m"] == cands[c_max]
        assert table.count["m"] == min(n for c, n in optimal if c == c_max)


def test_perfectly_separated_dev_reaches_f1_one():
    by_tweet = {f"p{i}": 1.0 + i for i in range(5)}
    by_tweet.update({f"n{i}": -1.0 - i for i in range(5)})
    rel = {f"p{i}" for i in range(5)}
    table = calibrate({"m": by_tweet}, [J(t, "m", t in rel) for t in by_tweet], "prototypical")
    assert brute_f1(by_tweet, rel, table.score["m"], 1) == 1.0
    # the margin rule centres T in the gap
    assert table.score["m"] == 0.0


def test_all_nonrelevant_gives_never_predict():
    by_tweet = {f"n{i}": float(i) for i in range(5)}
    table = calibrate({"m": by_tweet}, [J(t, "m", False) for t in by_tweet], "prototypical")
    assert table.score["m"] == math.inf and table.count["m"] == 1


def test_f1_grid_matches_brute_force(rng):
    by_tweet, rel = _random_dev(rng, "all", fcg=5)
    cands, f1 = f1_grid(by_tweet, rel, 5)
    assert list(cands) == brute_grid(by_tweet)
    for c, t in enumerate(cands):
        for n in range(1, 6):
            assert f1[c, n - 1] == pytest.approx(brute_f1(by_tweet, rel, t, n), abs=1e-12)


def test_dev_scores_leave_tweet_out_of_own_fcg(rng):
    vecs = _vec(rng, 6)
    vecs["m"] = np.zeros(8)
    g, enc, model = _setup("transe", {"m": ["t0", "t1", "t2"]}, vecs)
    sc = LinkScorer(model, g, enc)
    scores = dev_scores(sc, [("t0", None), ("t4", None)], "all")
    assert scores["m"]["t0"].shape == (2,)
    assert scores["m"]["t4"].shape == (3,)


def test_threshold_table_json_round_trip():
    t = ThresholdTable({"a": 1.5, "b": math.inf}, {"a": 2, "b": 1})
    assert ThresholdTable.from_json(t.to_json()) == t
