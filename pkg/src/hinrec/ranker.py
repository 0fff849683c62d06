"""Extended matrix factorization scoring and top-N ranking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import _kernels


@dataclass
class MfParams:
    """Latent factors and bridge vectors, one row per entity.

    x: (m, D) user factors, y: (n, D) concept factors,
    t_u: (m, d) user bridges, t_k: (n, d) concept bridges.
    The two mixing scalars are 0-d arrays so they can be updated in place.
    """

    x: np.ndarray
    y: np.ndarray
    t_u: np.ndarray
    t_k: np.ndarray
    beta_u: np.ndarray
    beta_k: np.ndarray

    @classmethod
    def init(cls, n_users: int, n_concepts: int, D: int, d: int, rng: np.random.Generator,
             scale: float = 0.1, beta: float = 1.0) -> "MfParams":
        return cls(
            x=rng.normal(0.0, scale, size=(n_users, D)),
            y=rng.normal(0.0, scale, size=(n_concepts, D)),
            t_u=rng.normal(0.0, scale, size=(n_users, d)),
            t_k=rng.normal(0.0, scale, size=(n_concepts, d)),
            beta_u=np.array(float(beta)),
            beta_k=np.array(float(beta)),
        )

    @classmethod
    def zeros(cls, n_users: int, n_concepts: int, D: int, d: int) -> "MfParams":
        return cls(np.zeros((n_users, D)), np.zeros((n_concepts, D)), np.zeros((n_users, d)),
                   np.zeros((n_concepts, d)), np.array(0.0), np.array(0.0))

    @property
    def n_users(self) -> int:
        return self.x.shape[0]

    @property
    def n_concepts(self) -> int:
        return self.y.shape[0]

    def tensors(self) -> Dict[str, np.ndarray]:
        return {"x": self.x, "y": self.y, "t_u": self.t_u, "t_k": self.t_k,
                "beta_u": self.beta_u, "beta_k": self.beta_k}


def score_pairs(params: MfParams, e_u: np.ndarray, e_k: np.ndarray, users: np.ndarray,
                concepts: np.ndarray) -> np.ndarray:
    """Vectorized rating prediction for aligned (user, concept) index arrays."""
    users = np.asarray(users, dtype=np.int64)
    concepts = np.asarray(concepts, dtype=np.int64)
    mf = _kernels.gather_dot(params.x, users, params.y, concepts)
    left = _kernels.gather_dot(e_u, users, params.t_k, concepts)
    right = _kernels.gather_dot(params.t_u, users, e_k, concepts)
    return mf + float(params.beta_u) * left + float(params.beta_k) * right


def predict_rating(params: MfParams, e_u: np.ndarray, e_k: np.ndarray, u: int, k: int) -> float:
    """x_u . y_k + beta_u (e_u . t_k) + beta_k (t_u . e_k) for a single pair.

    ``e_u`` and ``e_k`` are the single representation rows of user u and
    concept k.
    """
    if not 0 <= u < params.n_users:
        raise IndexError(f"user index {u} out of range [0, {params.n_users})")
    if not 0 <= k < params.n_concepts:
        raise IndexError(f"concept index {k} out of range [0, {params.n_concepts})")
    e_u = np.asarray(e_u, dtype=np.float64)
    e_k = np.asarray(e_k, dtype=np.float64)
    return float(params.x[u] @ params.y[k]
                 + float(params.beta_u) * (e_u @ params.t_k[k])
                 + float(params.beta_k) * (params.t_u[u] @ e_k))


@dataclass
class TopN:
    concepts: List[int]
    scores: List[float]
    exhausted: bool  # fewer than N candidates were available


class Recommender:
    """Frozen scoring model: MF parameters plus fused representations."""

    def __init__(self, params: MfParams, e_u: np.ndarray, e_k: np.ndarray):
        self.params = params
        self.e_u = e_u
        self.e_k = e_k

    @property
    def n_users(self) -> int:
        return self.params.n_users

    @property
    def n_concepts(self) -> int:
        return self.params.n_concepts

    def predict_rating(self, u: int, k: int) -> float:
        return predict_rating(self.params, self.e_u[u], self.e_k[k], u, k)

    def score_pairs(self, users, concepts) -> np.ndarray:
        return score_pairs(self.params, self.e_u, self.e_k, users, concepts)

    def predict_all_for_user(self, u: int, candidates: Sequence[int]) -> np.ndarray:
        cand = np.asarray(candidates, dtype=np.int64).reshape(-1)
        if len(cand) == 0:
            return np.zeros(0)
        if cand.min() < 0 or cand.max() >= self.n_concepts:
            raise IndexError("candidate concept index out of range")
        if not 0 <= u < self.n_users:
            raise IndexError(f"user index {u} out of range")
        return self.score_pairs(np.full(len(cand), u, dtype=np.int64), cand)

    def top_n(self, u: int, n: int, exclude: Optional[Iterable[int]] = None) -> TopN:
        scores = self.predict_all_for_user(u, np.arange(self.n_concepts))
        return top_n_from_scores(scores, n, exclude)


def top_n_from_scores(scores: np.ndarray, n: int, exclude: Optional[Iterable[int]] = None) -> TopN:
    """Highest scores first, ties by ascending index, excluded indices removed."""
    if n < 1:
        raise ValueError("N must be at least 1")
    scores = np.asarray(scores, dtype=np.float64)
    keep = np.ones(len(scores), dtype=bool)
    if exclude is not None:
        ex = np.fromiter((int(i) for i in exclude), dtype=np.int64)
        ex = ex[(ex >= 0) & (ex < len(scores))]
        keep[ex] = False
    cand = np.flatnonzero(keep)
    order = np.lexsort((cand, -scores[cand]))
    chosen = cand[order[:n]]
    return TopN([int(i) for i in chosen], [float(scores[i]) for i in chosen], len(cand) < n)


@dataclass
class RatingMatrix:
    """Observed click counts over (user, concept) pairs."""

    matrix: sp.csr_matrix

    @property
    def shape(self):
        return self.matrix.shape

    def observed(self, u: int) -> np.ndarray:
        row = self.matrix.getrow(u)
        return row.indices.copy()

    def pairs(self):
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order].astype(np.int64), coo.col[order].astype(np.int64), coo.data[order]
