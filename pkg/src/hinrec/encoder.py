"""Meta-path graph convolution with attention fusion, forward and backward.

One GCN stack per meta-path propagates content features over the path's
normalized adjacency; a per-node softmax over gated scores mixes the
per-path outputs into one representation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .graph import Hin, MetaPathSpec, PathAdjacency, compose_meta_path


# above this fill ratio a dense array beats csr for P @ H
DENSE_THRESHOLD = 0.05


@dataclass
class NormalizedAdjacency:
    matrix: sp.csr_matrix

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    @property
    def operator(self):
        """``matrix`` itself, or a dense copy when it is dense enough."""
        op = self.__dict__.get("_op")
        if op is None:
            n = self.matrix.shape[0]
            fill = self.matrix.nnz / float(n * n) if n else 0.0
            op = self.matrix.toarray() if fill > DENSE_THRESHOLD else self.matrix
            self.__dict__["_op"] = op
        return op


def normalize_adjacency(adj: Union[PathAdjacency, sp.spmatrix, np.ndarray]) -> NormalizedAdjacency:
    """P = D^-1/2 (A + I) D^-1/2 with D the row sums of A + I."""
    if isinstance(adj, PathAdjacency):
        a = adj.binary
    else:
        a = adj
    a = sp.csr_matrix(a, dtype=np.float64)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    a_tilde = (a + sp.identity(a.shape[0], format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    p = (d @ a_tilde @ d).tocsr()
    p.sort_indices()
    return NormalizedAdjacency(p)


def identity_adjacency(n: int) -> NormalizedAdjacency:
    return NormalizedAdjacency(sp.identity(n, format="csr", dtype=np.float64))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


@dataclass
class GcnStack:
    path: str
    weights: List[np.ndarray]

    @property
    def widths(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @classmethod
    def init(cls, path: str, in_width: int, d: int, layers: int, rng: np.random.Generator,
             hidden: Optional[Sequence[int]] = None) -> "GcnStack":
        if not 1 <= layers <= 4:
            raise ValueError("layers must be in 1..4")
        hidden = list(hidden) if hidden is not None else [d] * (layers - 1)
        if len(hidden) != layers - 1:
            raise ValueError(f"need {layers - 1} hidden widths, got {len(hidden)}")
        widths = [in_width] + hidden + [d]
        return cls(path, [glorot_uniform(rng, widths[i], widths[i + 1]) for i in range(layers)])


@dataclass
class GcnCache:
    inputs: List[np.ndarray]  # P @ h^l for each layer
    pre: List[np.ndarray]     # pre-activation of each layer


def gcn_forward(P: NormalizedAdjacency, X: np.ndarray, weights: Sequence[np.ndarray],
                px: Optional[np.ndarray] = None):
    """h^{l+1} = ReLU(P h^l W^l) with h^0 = X; returns (h^L, cache).

    ``px`` may carry a precomputed ``P @ X``.
    """
    if X.shape[1] != weights[0].shape[0]:
        raise ValueError(f"layer 0: feature width {X.shape[1]} != W0 input width {weights[0].shape[0]}")
    for i in range(1, len(weights)):
        if weights[i - 1].shape[1] != weights[i].shape[0]:
            raise ValueError(f"layer {i}: W{i - 1} output width {weights[i - 1].shape[1]} != "
                             f"W{i} input width {weights[i].shape[0]}")
    pm = P.operator
    inputs, pre = [], []
    h = X
    for i, w in enumerate(weights):
        ph = px if (i == 0 and px is not None) else pm @ h
        z = ph @ w
        inputs.append(ph)
        pre.append(z)
        h = np.maximum(z, 0.0)
    return h, GcnCache(inputs, pre)


def gcn_backward(P: NormalizedAdjacency, cache: GcnCache, weights: Sequence[np.ndarray],
                 grad_out: np.ndarray) -> List[np.ndarray]:
    """Weight gradients of a GCN stack given dLoss/dh^L. P is symmetric."""
    pm = P.operator
    grads: List[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    g = grad_out
    for i in range(len(weights) - 1, -1, -1):
        dz = g * (cache.pre[i] > 0)
        grads[i] = cache.inputs[i].T @ dz
        if i:
            g = pm @ (dz @ weights[i].T)
    return grads


def attention_scores(reps: Sequence[np.ndarray], a: np.ndarray, global_mode: bool = False) -> np.ndarray:
    """alpha[i, p] = softmax_p(tanh(a . reps[p][i])).

    In global mode the gated scores are averaged over nodes first, giving one
    weight vector shared by every node.
    """
    if not reps:
        raise ValueError("need at least one meta-path representation")
    gated = np.tanh(np.stack([r @ a for r in reps], axis=1))
    if global_mode:
        gated = np.broadcast_to(gated.mean(axis=0, keepdims=True), gated.shape)
    shifted = gated - gated.max(axis=1, keepdims=True)
    w = np.exp(shifted)
    # summing in sorted order keeps alpha exactly equivariant to path order
    return w / np.sort(w, axis=1).sum(axis=1, keepdims=True)


@dataclass
class FusedRepresentation:
    vectors: np.ndarray
    attention_weights: np.ndarray


def fuse(reps: Sequence[np.ndarray], alpha: np.ndarray) -> FusedRepresentation:
    e = np.zeros_like(reps[0])
    for p, r in enumerate(reps):
        e += alpha[:, p:p + 1] * r
    return FusedRepresentation(e, alpha)


def attention_backward(reps: Sequence[np.ndarray], alpha: np.ndarray, a: np.ndarray,
                       grad_e: np.ndarray, global_mode: bool = False):
    """Return (dLoss/dreps[p] for each p, dLoss/da) through fuse and softmax."""
    grad_alpha = np.stack([np.einsum("ij,ij->i", grad_e, r) for r in reps], axis=1)
    grad_gated = alpha * (grad_alpha - (alpha * grad_alpha).sum(axis=1, keepdims=True))
    gated = np.tanh(np.stack([r @ a for r in reps], axis=1))
    if global_mode:
        grad_gated = np.broadcast_to(grad_gated.mean(axis=0, keepdims=True), grad_gated.shape)
    grad_logit = grad_gated * (1.0 - gated ** 2)
    grad_reps = []
    grad_a = np.zeros_like(a)
    for p, r in enumerate(reps):
        grad_reps.append(alpha[:, p:p + 1] * grad_e + np.outer(grad_logit[:, p], a))
        grad_a += r.T @ grad_logit[:, p]
    return grad_reps, grad_a


@dataclass
class SideCache:
    reps: List[np.ndarray]
    gcn: List[GcnCache]
    fused: FusedRepresentation


@dataclass
class SideEncoder:
    """Everything needed to encode one entity side (users or concepts).

    ``propagators`` and ``features`` are fixed inputs; ``stacks`` and
    ``attention`` are trainable.
    """

    name: str
    features: np.ndarray
    propagators: List[NormalizedAdjacency]
    stacks: List[GcnStack]
    attention: np.ndarray
    global_attention: bool = False
    _px: List[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if len(self.propagators) != len(self.stacks):
            raise ValueError("one GCN stack per meta-path required")
        self._px = [np.asarray(p.operator @ self.features) for p in self.propagators]

    @property
    def paths(self) -> List[str]:
        return [s.path for s in self.stacks]

    def forward(self):
        reps, caches = [], []
        for prop, stack, px in zip(self.propagators, self.stacks, self._px):
            h, c = gcn_forward(prop, self.features, stack.weights, px=px)
            reps.append(h)
            caches.append(c)
        alpha = attention_scores(reps, self.attention, self.global_attention)
        fused = fuse(reps, alpha)
        return fused, SideCache(reps, caches, fused)

    def backward(self, cache: SideCache, grad_e: np.ndarray) -> Dict[str, np.ndarray]:
        grad_reps, grad_a = attention_backward(cache.reps, cache.fused.attention_weights,
                                               self.attention, grad_e, self.global_attention)
        out = {}
        for prop, stack, c, g in zip(self.propagators, self.stacks, cache.gcn, grad_reps):
            for i, gw in enumerate(gcn_backward(prop, c, stack.weights, g)):
                out[f"{self.name}.{stack.path}.W{i}"] = gw
        out[f"{self.name}.attention"] = grad_a
        return out

    def tensors(self) -> Dict[str, np.ndarray]:
        out = {}
        for stack in self.stacks:
            for i, w in enumerate(stack.weights):
                out[f"{self.name}.{stack.path}.W{i}"] = w
        out[f"{self.name}.attention"] = self.attention
        return out


def encode_side(hin: Hin, specs: Sequence[MetaPathSpec], X: np.ndarray, stacks: Sequence[GcnStack],
                attention: np.ndarray, global_attention: bool = False) -> FusedRepresentation:
    """Compose, normalize and propagate each meta-path, then fuse by attention."""
    anchors = {s.anchor for s in specs}
    if len(anchors) != 1:
        raise ValueError(f"meta-paths must share one anchor type, got {sorted(a.value for a in anchors)}")
    anchor = anchors.pop()
    if X.shape[0] != hin.count(anchor):
        raise ValueError(f"feature rows {X.shape[0]} != {anchor.value} count {hin.count(anchor)}")
    reps = []
    for spec, stack in zip(specs, stacks):
        P = normalize_adjacency(compose_meta_path(hin, spec))
        h, _ = gcn_forward(P, X, stack.weights)
        reps.append(h)
    alpha = attention_scores(reps, attention, global_attention)
    return fuse(reps, alpha)
