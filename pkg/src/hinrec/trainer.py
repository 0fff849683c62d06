"""End-to-end training of the encoders and the MF ranker by SGD."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import _kernels
from .encoder import (GcnStack, NormalizedAdjacency, SideEncoder, identity_adjacency,
                      normalize_adjacency)
from .features import FeatureMatrix
from .graph import (EntityType, Hin, MetaPathSpec, compose_meta_path, homogeneous_adjacency)
from .ranker import MfParams, RatingMatrix, Recommender

log = logging.getLogger(__name__)

MODES = ("content_only", "context_only", "content_plus_context", "homogeneous")
# projected back onto [0, inf) after every step
NONNEGATIVE = ("beta_u", "beta_k")

MODE_ALIASES = {"s": "content_only", "r": "context_only", "s+r": "content_plus_context",
                "h": "homogeneous"}


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    lam: float = 1e-4
    epochs: int = 20
    batch_size: int = 256
    negatives_per_positive: int = 1
    seed: int = 0
    mode: str = "content_plus_context"
    clip_norm: float = 5.0
    freeze_beta: bool = False
    log1p_targets: bool = False
    squared_norm: bool = False

    def __post_init__(self):
        self.mode = MODE_ALIASES.get(self.mode, self.mode)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class TrainSample:
    user: int
    concept: int
    target: float
    is_negative: bool = False


@dataclass
class SampleBatch:
    users: np.ndarray
    concepts: np.ndarray
    targets: np.ndarray
    negative: np.ndarray

    def __len__(self) -> int:
        return len(self.users)

    @classmethod
    def from_samples(cls, samples: Sequence[TrainSample]) -> "SampleBatch":
        return cls(np.array([s.user for s in samples], dtype=np.int64),
                   np.array([s.concept for s in samples], dtype=np.int64),
                   np.array([s.target for s in samples], dtype=np.float64),
                   np.array([s.is_negative for s in samples], dtype=bool))

    def slice(self, lo: int, hi: int) -> "SampleBatch":
        return SampleBatch(self.users[lo:hi], self.concepts[lo:hi], self.targets[lo:hi],
                           self.negative[lo:hi])


def full_grid_batch(ratings: RatingMatrix) -> SampleBatch:
    """Every (user, concept) cell, unobserved ones with target 0."""
    m, n = ratings.shape
    dense = ratings.matrix.toarray()
    users = np.repeat(np.arange(m), n)
    concepts = np.tile(np.arange(n), m)
    targets = dense.ravel().astype(np.float64)
    return SampleBatch(users, concepts, targets, targets == 0)


# ------------------------------------------------------------------ model --

@dataclass
class Model:
    user: SideEncoder
    concept: SideEncoder
    mf: MfParams
    seed: int = 0

    def tensors(self) -> Dict[str, np.ndarray]:
        """All trainable tensors in a fixed order."""
        out = {}
        out.update(self.user.tensors())
        out.update(self.concept.tensors())
        out.update(self.mf.tensors())
        return out

    def forward(self):
        fu, cu = self.user.forward()
        fk, ck = self.concept.forward()
        return Forward(fu.vectors, cu, fk.vectors, ck)

    def freeze(self) -> Recommender:
        fwd = self.forward()
        return Recommender(self.mf, fwd.e_u, fwd.e_k)

    def copy(self) -> "Model":
        import copy
        return copy.deepcopy(self)


@dataclass
class Forward:
    e_u: np.ndarray
    user_cache: object
    e_k: np.ndarray
    concept_cache: object


def _propagators(hin: Hin, specs: Sequence[MetaPathSpec], mode: str,
                 anchor: EntityType) -> List[NormalizedAdjacency]:
    n = hin.count(anchor)
    if mode == "content_only":
        return [identity_adjacency(n) for _ in specs]
    if mode == "homogeneous":
        return [normalize_adjacency(homogeneous_adjacency(hin, anchor))]
    return [normalize_adjacency(compose_meta_path(hin, s)) for s in specs]


def build_model(hin: Hin, user_features: FeatureMatrix, concept_features: FeatureMatrix,
                user_specs: Sequence[MetaPathSpec], concept_specs: Sequence[MetaPathSpec],
                mode: str = "content_plus_context", d: int = 100, layers: int = 3, D: int = 30,
                seed: int = 0, hidden: Optional[Sequence[int]] = None,
                global_attention: bool = False, beta: float = 1.0, init_scale: float = 0.1) -> Model:
    """Initialize encoders for both sides and the MF parameters.

    ``mode`` picks which inputs feed the encoders: content_only keeps the
    features but propagates over the identity, context_only replaces the
    features by one-hot rows, homogeneous uses one untyped adjacency per side.
    """
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not user_specs or not concept_specs:
        raise ValueError("need at least one meta-path per side")
    rng = np.random.default_rng(seed)
    sides = []
    for name, anchor, feats, specs in (("user", EntityType.USER, user_features, user_specs),
                                       ("concept", EntityType.CONCEPT, concept_features, concept_specs)):
        X = np.eye(hin.count(anchor)) if mode == "context_only" else feats.rows
        if X.shape[0] != hin.count(anchor):
            raise ValueError(f"{name} features have {X.shape[0]} rows, graph has {hin.count(anchor)}")
        props = _propagators(hin, specs, mode, anchor)
        path_names = ["homogeneous"] if mode == "homogeneous" else [s.name for s in specs]
        stacks = [GcnStack.init(p, X.shape[1], d, layers, rng, hidden) for p in path_names]
        s = np.sqrt(6.0 / (d + 1))
        attention = rng.uniform(-s, s, size=d)
        sides.append(SideEncoder(name, X, props, stacks, attention, global_attention))
    mf = MfParams.init(hin.count(EntityType.USER), hin.count(EntityType.CONCEPT), D, d, rng,
                       scale=init_scale, beta=beta)
    return Model(sides[0], sides[1], mf, seed)


# ------------------------------------------------------------- objective --

@dataclass
class GradientBundle:
    grads: Dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def __iter__(self):
        return iter(self.grads)

    def items(self):
        return self.grads.items()


def _norm_terms(params: np.ndarray, rows: np.ndarray, squared: bool):
    sub = params[rows]
    norms = np.sqrt((sub * sub).sum(axis=1))
    if squared:
        return float((norms ** 2).sum()), 2.0 * sub
    safe = np.where(norms > 0, norms, 1.0)
    return float(norms.sum()), sub / safe[:, None] * (norms > 0)[:, None]


def _objective(batch: SampleBatch, model: Model, fwd: Forward, lam: float, squared_norm: bool,
               residual: bool = True, need_grad: bool = True):
    mf = model.mf
    u, k = batch.users, batch.concepts
    B = len(batch)
    total = 0.0
    grads = None
    if need_grad:
        grads = {"x": np.zeros_like(mf.x), "y": np.zeros_like(mf.y), "t_u": np.zeros_like(mf.t_u),
                 "t_k": np.zeros_like(mf.t_k), "beta_u": np.array(0.0), "beta_k": np.array(0.0),
                 "e_u": np.zeros_like(fwd.e_u), "e_k": np.zeros_like(fwd.e_k)}
    if residual and B:
        left = _kernels.gather_dot(fwd.e_u, u, mf.t_k, k)
        right = _kernels.gather_dot(mf.t_u, u, fwd.e_k, k)
        pred = (_kernels.gather_dot(mf.x, u, mf.y, k) + float(mf.beta_u) * left
                + float(mf.beta_k) * right)
        res = batch.targets - pred
        total += float(np.mean(res * res))
        if need_grad:
            g = (-2.0 / B) * res
            bu, bk = float(mf.beta_u), float(mf.beta_k)
            gc = g[:, None]
            _kernels.scatter_add_rows(grads["x"], u, gc * mf.y[k])
            _kernels.scatter_add_rows(grads["y"], k, gc * mf.x[u])
            _kernels.scatter_add_rows(grads["t_k"], k, (gc * bu) * fwd.e_u[u])
            _kernels.scatter_add_rows(grads["e_u"], u, (gc * bu) * mf.t_k[k])
            _kernels.scatter_add_rows(grads["t_u"], u, (gc * bk) * fwd.e_k[k])
            _kernels.scatter_add_rows(grads["e_k"], k, (gc * bk) * mf.t_u[u])
            grads["beta_u"] = np.array(float(g @ left))
            grads["beta_k"] = np.array(float(g @ right))
    if lam > 0 and B:
        uu = np.unique(u)
        kk = np.unique(k)
        for name, rows in (("x", uu), ("t_u", uu), ("y", kk), ("t_k", kk)):
            val, dval = _norm_terms(getattr(mf, name), rows, squared_norm)
            total += lam * val
            if need_grad:
                grads[name][rows] += lam * dval
    return total, grads


def loss(batch: SampleBatch, model: Model, lam: float = 0.0, squared_norm: bool = False,
         residual: bool = True) -> float:
    """Mean squared rating error plus lambda times the norms of touched rows."""
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    fwd = model.forward()
    return _objective(batch, model, fwd, lam, squared_norm, residual, need_grad=False)[0]


def backward(batch: SampleBatch, model: Model, lam: float = 0.0, squared_norm: bool = False,
             residual: bool = True, fwd: Optional[Forward] = None):
    """Return (loss, GradientBundle) with exact gradients for every tensor."""
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    if fwd is None:
        fwd = model.forward()
    value, g = _objective(batch, model, fwd, lam, squared_norm, residual)
    bundle = {}
    bundle.update(model.user.backward(fwd.user_cache, g.pop("e_u")))
    bundle.update(model.concept.backward(fwd.concept_cache, g.pop("e_k")))
    bundle.update(g)
    ordered = {name: bundle[name] for name in model.tensors()}
    for name, arr in ordered.items():
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    return value, GradientBundle(ordered)


def sgd_step(model: Model, bundle: GradientBundle, learning_rate: float, clip_norm: float = 5.0,
             frozen: Sequence[str] = ()) -> Model:
    """In-place update theta -= lr * g, clipping each tensor's gradient norm."""
    tensors = model.tensors()
    for name in tensors:
        if name in frozen or name not in bundle.grads:
            continue
        g = bundle[name]
        if clip_norm is not None and clip_norm > 0:
            n = float(np.sqrt(np.sum(g * g)))
            if n > clip_norm:
                g = g * (clip_norm / n)
        tensors[name] -= learning_rate * g
        if name in NONNEGATIVE:
            np.maximum(tensors[name], 0.0, out=tensors[name])
    return model


# --------------------------------------------------------------- training --

def sample_negatives(rng: np.random.Generator, users: np.ndarray, observed: np.ndarray,
                     per_positive: int) -> np.ndarray:
    """Uniform negatives per user from concepts absent in the boolean ``observed`` matrix."""
    n = observed.shape[1]
    full = observed[users].all(axis=1)
    if np.any(full):
        raise ValueError(f"user {int(users[np.argmax(full)])} has no unobserved concepts")
    reps = np.repeat(users, per_positive)
    out = rng.integers(0, n, size=len(reps))
    bad = observed[reps, out]
    while np.any(bad):
        idx = np.flatnonzero(bad)
        out[idx] = rng.integers(0, n, size=len(idx))
        bad[idx] = observed[reps[idx], out[idx]]
    return out.reshape(len(users), per_positive)


@dataclass
class TrainResult:
    model: Model
    losses: List[float]
    initial_loss: float
    wall_ms: List[float]

    def log_lines(self) -> List[str]:
        return [f"{i + 1}\t{l!r}\t{w:.1f}" for i, (l, w) in enumerate(zip(self.losses, self.wall_ms))]


def epoch_samples(rng: np.random.Generator, pos_u: np.ndarray, pos_k: np.ndarray,
                  pos_t: np.ndarray, observed: np.ndarray, per_positive: int) -> SampleBatch:
    order = rng.permutation(len(pos_u))
    u, k, t = pos_u[order], pos_k[order], pos_t[order]
    neg = sample_negatives(rng, u, observed, per_positive)
    w = per_positive + 1
    users = np.repeat(u, w)
    concepts = np.empty((len(u), w), dtype=np.int64)
    concepts[:, 0] = k
    concepts[:, 1:] = neg
    targets = np.zeros((len(u), w))
    targets[:, 0] = t
    negative = np.ones((len(u), w), dtype=bool)
    negative[:, 0] = False
    return SampleBatch(users, concepts.ravel(), targets.ravel(), negative.ravel())


def train(model: Model, ratings: RatingMatrix, config: TrainConfig,
          on_epoch: Optional[Callable[[int, float, float, Model], None]] = None) -> TrainResult:
    """Seeded SGD over observed positives, each paired with sampled negatives."""
    pos_u, pos_k, pos_t = ratings.pairs()
    if len(pos_u) == 0:
        raise ValueError("no training positives")
    pos_t = np.log1p(pos_t) if config.log1p_targets else pos_t.astype(np.float64)
    observed = ratings.matrix.toarray() > 0
    rng = np.random.default_rng(config.seed)
    frozen = ("beta_u", "beta_k") if config.freeze_beta else ()
    losses, walls = [], []
    initial = None
    B = config.batch_size
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        samples = epoch_samples(rng, pos_u, pos_k, pos_t, observed, config.negatives_per_positive)
        if initial is None:
            fwd = model.forward()
            acc = 0.0
            for lo in range(0, len(samples), B):
                chunk = samples.slice(lo, lo + B)
                acc += len(chunk) * _objective(chunk, model, fwd, config.lam, config.squared_norm,
                                               need_grad=False)[0]
            initial = acc / len(samples)
        acc = 0.0
        for lo in range(0, len(samples), B):
            chunk = samples.slice(lo, lo + B)
            value, bundle = backward(chunk, model, config.lam, config.squared_norm)
            sgd_step(model, bundle, config.learning_rate, config.clip_norm, frozen)
            acc += len(chunk) * value
        epoch_loss = acc / len(samples)
        wall = (time.perf_counter() - t0) * 1000.0
        losses.append(epoch_loss)
        walls.append(wall)
        log.info("epoch %d loss %.6f (%.0f ms)", epoch + 1, epoch_loss, wall)
        if on_epoch is not None:
            on_epoch(epoch + 1, epoch_loss, wall, model)
    if initial is None:
        initial = float("nan")
    return TrainResult(model, losses, initial, walls)
