import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hinrec.metrics import (REPORT_KEYS, EvalError, EvalInstance, MetricReport, build_eval_instances,
                            evaluate, hr_at_k, mrr, ndcg_at_k, ndcg_multi, positive_ranks,
                            report_from_scores)


def brute_rank(pos_score, pos_item, neg_scores, neg_items):
    cands = [(float(pos_score), int(pos_item))] + [(float(s), int(i)) for s, i in zip(neg_scores, neg_items)]
    cands.sort(key=lambda c: (-c[0], c[1]))
    return cands.index((float(pos_score), int(pos_item))) + 1


def brute_auc(pos_score, neg_scores):
    credit = 0.0
    for s in neg_scores:
        if s < pos_score:
            credit += 1.0
        elif s == pos_score:
            credit += 0.5
    return credit / len(neg_scores)


def random_instances(rng, count=1000, n_neg=99, ties=False):
    neg_items = np.stack([rng.permutation(1000)[:n_neg + 1] for _ in range(count)])
    pos_item = neg_items[:, 0].copy()
    neg_items = neg_items[:, 1:]
    if ties:
        pos_score = rng.integers(0, 5, count).astype(float)
        neg_scores = rng.integers(0, 5, (count, n_neg)).astype(float)
    else:
        pos_score = rng.normal(size=count)
        neg_scores = rng.normal(size=(count, n_neg))
    return pos_score, pos_item, neg_scores, neg_items


# ---------------------------------------------------------------- examples --

def test_hr_examples():
    assert hr_at_k(np.array([1]), 5) == 1.0
    assert hr_at_k(np.array([6]), 5) == 0.0


def test_ndcg_examples():
    assert ndcg_at_k(np.array([1]), 5) == 1.0
    assert ndcg_at_k(np.array([3]), 5) == 0.5
    assert ndcg_at_k(np.array([11]), 10) == 0.0


def test_mrr_examples():
    assert mrr(np.array([1, 1, 1])) == 1.0
    assert mrr(np.array([4])) == 0.25
    assert mrr(np.array([1, 100])) == pytest.approx(0.505, abs=1e-15)


def test_auc_examples():
    negs = np.arange(99, dtype=float)
    _, a = positive_ranks(np.array([100.0]), np.array([0]), negs[None], np.arange(1, 100)[None])
    assert a[0] == 1.0
    _, a = positive_ranks(np.array([89.5]), np.array([0]), negs[None], np.arange(1, 100)[None])
    assert a[0] == pytest.approx(90 / 99)
    assert 90 / 99 == pytest.approx(0.9091, abs=1e-4)
    _, a = positive_ranks(np.array([0.0]), np.array([0]), np.zeros((1, 99)), np.arange(1, 100)[None])
    assert a[0] == 0.5


def test_ties_broken_by_ascending_index():
    ranks, _ = positive_ranks(np.array([1.0, 1.0]), np.array([5, 5]),
                              np.array([[1.0, 1.0], [1.0, 1.0]]), np.array([[3, 7], [6, 8]]))
    assert ranks.tolist() == [2, 1]


def test_ndcg_multi_general_normalizer():
    assert ndcg_multi([1, 2, 3], [1], 3) == 1.0
    want = (1 / math.log2(3)) / (1 + 1 / math.log2(3))
    assert ndcg_multi([9, 1, 7, 2], [1, 2], 2) == pytest.approx(want)


# ------------------------------------------------------------- oracles --

@pytest.mark.parametrize("ties", [False, True])
def test_metrics_match_brute_force(ties):
    rng = np.random.default_rng(7 + ties)
    ps, pi, ns, ni = random_instances(rng, ties=ties)
    rep = report_from_scores(ps, pi, ns, ni)
    ranks = [brute_rank(ps[i], pi[i], ns[i], ni[i]) for i in range(len(ps))]
    aucs = [brute_auc(ps[i], ns[i]) for i in range(len(ps))]
    for k in (1, 5, 10, 20):
        assert rep.hr[k] == sum(r <= k for r in ranks) / len(ranks)
    for k in (5, 10, 20):
        assert rep.ndcg[k] == pytest.approx(sum(1 / math.log2(r + 1) for r in ranks if r <= k) / len(ranks),
                                            rel=0, abs=1e-15)
    assert rep.mrr == pytest.approx(sum(1 / r for r in ranks) / len(ranks), rel=0, abs=1e-15)
    assert abs(rep.auc - sum(aucs) / len(aucs)) <= 1e-12


def test_random_scores_hit_rate():
    ps, pi, ns, ni = random_instances(np.random.default_rng(11))
    rep = report_from_scores(ps, pi, ns, ni)
    assert abs(rep.hr[10] - 0.10) <= 0.03


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_report_invariants_and_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    ps, pi, ns, ni = random_instances(rng, count=50, ties=bool(seed % 2))
    rep = report_from_scores(ps, pi, ns, ni)
    hr = [rep.hr[k] for k in (1, 5, 10, 20)]
    assert hr == sorted(hr)
    for k in (5, 10, 20):
        assert rep.ndcg[k] <= rep.hr[k]
    assert all(0 <= v <= 1 for v in hr + [rep.mrr, rep.auc])
    ranks, _ = positive_ranks(ps, pi, ns, ni)
    assert hr_at_k(ranks, 100) == 1.0
    t = report_from_scores(np.exp(ps) * 3 + 1, pi, np.exp(ns) * 3 + 1, ni)
    assert t.as_dict() == rep.as_dict()


# ---------------------------------------------------------- instances --

def test_build_instances_shape_and_exclusions():
    interacted = {0: {1, 2, 3}, 1: {4}}
    inst = build_eval_instances(np.array([0, 0, 1]), np.array([2, 3, 4]), 200, interacted, seed=3)
    assert len(inst) == 3
    assert all(len(i.candidates) == 100 for i in inst)
    for i in inst:
        assert not set(i.negatives.tolist()) & (interacted[i.user] | {i.positive})
        assert len(set(i.negatives.tolist())) == 99
    again = build_eval_instances(np.array([0, 0, 1]), np.array([2, 3, 4]), 200, interacted, seed=3)
    assert all(np.array_equal(a.negatives, b.negatives) for a, b in zip(inst, again))


def test_build_instances_rejects_saturated_user():
    interacted = {7: set(range(150))}
    with pytest.raises(EvalError, match="user 7"):
        build_eval_instances(np.array([7]), np.array([0]), 200, interacted, negatives=99)


def test_build_instances_rejects_empty_split():
    with pytest.raises(EvalError):
        build_eval_instances(np.array([]), np.array([]), 10, {})


# ----------------------------------------------------------- evaluate --

class OracleModel:
    def predict_all_for_user(self, u, candidates):
        s = np.zeros(len(candidates))
        s[0] = 1e300
        return s


class RandomModel:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def predict_all_for_user(self, u, candidates):
        return self.rng.random(len(candidates))


def test_perfect_ranker():
    inst = [EvalInstance(0, 0, np.arange(1, 100)) for _ in range(5)]
    rep = evaluate(OracleModel(), inst)
    assert rep.hr[1] == rep.ndcg[5] == rep.mrr == rep.auc == 1.0


def test_random_model_hit_rate():
    inst = [EvalInstance(0, i % 200, np.arange(200, 299)) for i in range(1000)]
    assert abs(evaluate(RandomModel(0), inst).hr[10] - 0.10) <= 0.03


def test_report_serialization():
    ps, pi, ns, ni = random_instances(np.random.default_rng(0), count=20)
    rep = report_from_scores(ps, pi, ns, ni)
    d = json.loads(rep.to_json())
    assert tuple(d) == REPORT_KEYS
    assert MetricReport.from_dict(d).as_dict() == rep.as_dict()
    header, values = rep.to_tsv().splitlines()
    assert header.split("\t") == list(REPORT_KEYS)
    assert float(values.split("\t")[2]) == rep.hr[10]
