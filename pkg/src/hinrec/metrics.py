"""Sampled-candidate ranking evaluation: HR@K, NDCG@K, MRR and AUC."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import _kernels

HR_KS = (1, 5, 10, 20)
NDCG_KS = (5, 10, 20)
REPORT_KEYS = tuple([f"hr@{k}" for k in HR_KS] + [f"ndcg@{k}" for k in NDCG_KS]
                    + ["mrr", "auc", "n_instances"])


class EvalError(ValueError):
    pass


@dataclass
class EvalInstance:
    user: int
    positive: int
    negatives: np.ndarray

    @property
    def candidates(self) -> np.ndarray:
        return np.concatenate([[self.positive], self.negatives]).astype(np.int64)


def build_eval_instances(test_users: np.ndarray, test_concepts: np.ndarray, n_concepts: int,
                         interacted: Dict[int, set], negatives: int = 99, seed: int = 0
                         ) -> List[EvalInstance]:
    """One instance per test positive with uniformly sampled unseen negatives.

    ``interacted[u]`` holds every concept u touched in train or test; those
    are never sampled as negatives.
    """
    if len(test_users) == 0:
        raise EvalError("test split is empty")
    rng = np.random.default_rng(seed)
    out = []
    for u, k in zip(np.asarray(test_users), np.asarray(test_concepts)):
        u, k = int(u), int(k)
        seen = interacted.get(u, set()) | {k}
        eligible = np.setdiff1d(np.arange(n_concepts), np.fromiter(seen, dtype=np.int64),
                                assume_unique=False)
        if len(eligible) < negatives:
            raise EvalError(f"user {u}: only {len(eligible)} eligible negatives, {negatives} requested")
        neg = rng.choice(eligible, size=negatives, replace=False)
        out.append(EvalInstance(u, k, neg.astype(np.int64)))
    return out


def positive_ranks(pos_score: np.ndarray, pos_item: np.ndarray, neg_scores: np.ndarray,
                   neg_items: np.ndarray):
    """1-based rank of each positive among its candidates and its AUC.

    Ties are broken by ascending item index; AUC gives half credit to ties.
    """
    pos_score = np.ascontiguousarray(pos_score, dtype=np.float64)
    neg_scores = np.ascontiguousarray(neg_scores, dtype=np.float64)
    pos_item = np.ascontiguousarray(pos_item, dtype=np.int64)
    neg_items = np.ascontiguousarray(neg_items, dtype=np.int64)
    above, tied_before, tied = _kernels.rank_counts(pos_score, pos_item, neg_scores, neg_items)
    ranks = 1 + above + tied_before
    n_neg = neg_scores.shape[1]
    below = n_neg - above - tied
    auc = (below + 0.5 * tied) / n_neg if n_neg else np.ones(len(ranks))
    return ranks, auc


def hr_at_k(ranks: np.ndarray, k: int) -> float:
    return float(np.mean(np.asarray(ranks) <= k))


def ndcg_at_k(ranks: np.ndarray, k: int) -> float:
    """Single-positive NDCG: the ideal DCG is 1, so no normalization is needed."""
    r = np.asarray(ranks, dtype=np.float64)
    return float(np.mean(np.where(r <= k, 1.0 / np.log2(r + 1.0), 0.0)))


def ndcg_multi(ranked: Sequence[int], positives: Sequence[int], k: int) -> float:
    """NDCG@k with several relevant items, normalized by the ideal DCG."""
    pos = set(int(p) for p in positives)
    if not pos:
        return 0.0
    dcg = sum(1.0 / np.log2(i + 2.0) for i, item in enumerate(ranked[:k]) if int(item) in pos)
    ideal = sum(1.0 / np.log2(i + 2.0) for i in range(min(k, len(pos))))
    return float(dcg / ideal)


def mrr(ranks: np.ndarray) -> float:
    return float(np.mean(1.0 / np.asarray(ranks, dtype=np.float64)))


def auc(auc_per_instance: np.ndarray) -> float:
    return float(np.mean(auc_per_instance))


@dataclass
class MetricReport:
    hr: Dict[int, float]
    ndcg: Dict[int, float]
    mrr: float
    auc: float
    instance_count: int
    extra: Dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, float]:
        d = {f"hr@{k}": self.hr[k] for k in HR_KS}
        d.update({f"ndcg@{k}": self.ndcg[k] for k in NDCG_KS})
        d["mrr"] = self.mrr
        d["auc"] = self.auc
        d["n_instances"] = self.instance_count
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2) + "\n"

    def to_tsv(self) -> str:
        d = self.as_dict()
        return "\t".join(REPORT_KEYS) + "\n" + "\t".join(_fmt(d[k]) for k in REPORT_KEYS) + "\n"

    @classmethod
    def from_dict(cls, d: Dict[str, float]) -> "MetricReport":
        return cls({k: d[f"hr@{k}"] for k in HR_KS}, {k: d[f"ndcg@{k}"] for k in NDCG_KS},
                   d["mrr"], d["auc"], int(d["n_instances"]))


def _fmt(v) -> str:
    return str(v) if isinstance(v, int) else repr(float(v))


def report_from_scores(pos_score, pos_item, neg_scores, neg_items) -> MetricReport:
    ranks, per_auc = positive_ranks(pos_score, pos_item, neg_scores, neg_items)
    return MetricReport({k: hr_at_k(ranks, k) for k in HR_KS},
                        {k: ndcg_at_k(ranks, k) for k in NDCG_KS},
                        mrr(ranks), auc(per_auc), len(ranks))


def evaluate(model, instances: Sequence[EvalInstance]) -> MetricReport:
    """Score every candidate with ``model.predict_all_for_user`` and aggregate."""
    if not instances:
        raise EvalError("no evaluation instances")
    width = len(instances[0].negatives)
    pos_score = np.empty(len(instances))
    pos_item = np.empty(len(instances), dtype=np.int64)
    neg_scores = np.empty((len(instances), width))
    neg_items = np.empty((len(instances), width), dtype=np.int64)
    for i, inst in enumerate(instances):
        s = model.predict_all_for_user(inst.user, inst.candidates)
        pos_score[i] = s[0]
        neg_scores[i] = s[1:]
        pos_item[i] = inst.positive
        neg_items[i] = inst.negatives
    return report_from_scores(pos_score, pos_item, neg_scores, neg_items)
