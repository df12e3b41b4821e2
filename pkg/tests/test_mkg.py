from itertools import combinations
from math import comb

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mistlink.corpus import RelevanceJudgment as J
from mistlink.errors import DataError
from mistlink.mkg import (DataSplit, LinkTriple, MisinfoKnowledgeGraph, phase1_extend,
                          seed_fcgs, training_triples)


def test_link_triple_rejects_self_loop():
    with pytest.raises(ValueError):
        LinkTriple("a", "m", "a")


def test_data_split_disjoint():
    with pytest.raises(DataError):
        DataSplit([J("a", "m", True)], [J("a", "m", False)], [])
    DataSplit([J("a", "m", True)], [J("a", "n", True)], [])


def test_seed_counts_attached_and_unconnected():
    dev = [J(f"r{i}", f"m{i % 3}", True) for i in range(245)]
    dev += [J(f"u{i}", "m0", False) for i in range(170)]
    g = seed_fcgs(dev)
    assert len(g.connected_tweets()) == 245
    assert len(g.unconnected) == 170


def test_seed_clique_sizes():
    g = seed_fcgs([J(t, "m", True) for t in "abc"])
    assert g.fcg_size("m") == 3 and g.edge_count("m") == 3
    g = seed_fcgs([J("a", "m", True)])
    assert g.fcg_size("m") == 1 and g.edge_count("m") == 0


def test_empty_fcg_allowed():
    g = seed_fcgs([J("a", "m", False)], mist_ids=["m", "n"])
    assert g.fcg_size("m") == 0 and g.fcg_size("n") == 0
    assert g.unconnected == {"a"}


def test_add_member_adds_n_edges():
    g = seed_fcgs([J(t, "m", True) for t in "abcd"])
    assert g.add_member("e", "m", "train") == 4
    assert g.add_member("e", "m", "train") == 0


def test_phase1_counts_and_multi_membership():
    g = seed_fcgs([J("s1", "m1", True), J("s2", "m2", True)])
    train = [J("t1", "m1", True), J("t1", "m2", True), J("t2", "m1", True), J("t3", "m1", False)]
    phase1_extend(g, train)
    assert g.is_member("t1", "m1") and g.is_member("t1", "m2")
    assert g.unconnected == {"t3"}
    assert g.train_tweets == ["t1", "t2", "t3"]
    events = sum(j.relevant for j in train)
    assert events == 3 and len({j.tweet_id for j in train if j.relevant}) <= events


def test_unconnected_tweet_later_relevant_is_moved():
    g = seed_fcgs([J("a", "m", True), J("x", "m", False)])
    phase1_extend(g, [J("x", "n", True)])
    assert "x" not in g.unconnected


def test_triples_uncapped_small():
    g = seed_fcgs([J("s1", "m", True), J("s2", "m", True)])
    phase1_extend(g, [J("t", "m", True)])
    trip = training_triples(g, per_link_cap=None)
    assert sorted(trip, key=lambda x: x.tail) == [LinkTriple("t", "m", "s1"), LinkTriple("t", "m", "s2")]


def test_triples_capped():
    g = seed_fcgs([J(f"s{i}", "m", True) for i in range(50)])
    phase1_extend(g, [J("t", "m", True)])
    trip = training_triples(g, per_link_cap=10)
    assert len(trip) == 10 and len({t.tail for t in trip}) == 10


def _replay_count(dev, train, cap):
    members = {}
    for j in dev:
        if j.relevant:
            members.setdefault(j.mist_id, [])
            if j.tweet_id not in members[j.mist_id]:
                members[j.mist_id].append(j.tweet_id)
    total = 0
    for j in train:
        if not j.relevant:
            continue
        cur = members.setdefault(j.mist_id, [])
        if j.tweet_id in cur:
            continue
        total += len(cur) if cap is None else min(cap, len(cur))
        cur.append(j.tweet_id)
    return total


judgment_lists = st.lists(
    st.tuples(st.integers(0, 15), st.integers(0, 3), st.booleans()), max_size=40)


def _to_j(rows, prefix):
    seen, out = set(), []
    for t, m, r in rows:
        if (t, m) not in seen:
            seen.add((t, m))
            out.append(J(f"{prefix}{t}", f"m{m}", r))
    return out


@given(judgment_lists, judgment_lists, st.sampled_from([None, 1, 3]), st.integers(0, 99))
def test_graph_invariants(dev_rows, train_rows, cap, seed):
    dev, train = _to_j(dev_rows, "d"), _to_j(train_rows, "t")
    g = seed_fcgs(dev)
    before = {m: list(g.members(m)) for m in g.mists}
    phase1_extend(g, train)
    for m in g.mists:
        members = g.members(m)
        # monotone membership, full connectivity
        assert members[:len(before.get(m, []))] == before.get(m, [])
        assert g.edge_count(m) == comb(len(members), 2)
        assert all(g.has_edge(a, m, b) for a, b in combinations(members, 2))
        assert len(list(g.edges(m))) == comb(len(members), 2)
    assert not (g.unconnected & g.connected_tweets())
    triples = training_triples(g, cap, seed)
    assert all(t in g for t in triples)
    assert len(triples) == _replay_count(dev, train, cap)
    assert training_triples(g, cap, seed) == triples


def test_graph_json_round_trip(tmp_path):
    g = seed_fcgs([J("a", "m", True), J("b", "m", True), J("c", "m", False)], ["m", "n"])
    phase1_extend(g, [J("t", "m", True), J("u", "n", False)])
    g.tweet_texts = {"a": "x", "b": "y"}
    g.mist_texts = {"m": "desc"}
    g.save(tmp_path / "g.json")
    h = MisinfoKnowledgeGraph.load(tmp_path / "g.json")
    assert h.to_json() == g.to_json()
    assert h.member_origin == g.member_origin


def test_graph_load_rejects_bad_version(tmp_path):
    p = tmp_path / "g.json"
    p.write_text('{"version": 99}')
    with pytest.raises(DataError):
        MisinfoKnowledgeGraph.load(p)
