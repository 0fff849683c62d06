"""Typed heterogeneous graph store and meta-path composition."""
from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp


class SchemaError(ValueError):
    """Raised when an operation needs a valid graph and does not get one."""


class MetaPathError(ValueError):
    pass


class EntityType(str, enum.Enum):
    USER = "User"
    COURSE = "Course"
    VIDEO = "Video"
    TEACHER = "Teacher"
    CONCEPT = "Concept"

    @classmethod
    def parse(cls, text: str) -> "EntityType":
        for member in cls:
            if text.strip().lower() == member.value.lower():
                return member
        raise ValueError(f"unknown entity type {text!r}")


ENTITY_ORDER = tuple(EntityType)


@dataclass(frozen=True)
class RelationType:
    name: str
    src: EntityType
    dst: EntityType
    symmetric_closure: bool = True


@dataclass(frozen=True)
class NetworkSchema:
    entity_types: frozenset
    relation_types: Tuple[RelationType, ...]

    def relation(self, name: str) -> RelationType:
        for rel in self.relation_types:
            if rel.name == name:
                return rel
        raise KeyError(name)

    def has_relation(self, name: str) -> bool:
        return any(rel.name == name for rel in self.relation_types)


CLICK = RelationType("click", EntityType.USER, EntityType.CONCEPT)
LEARN = RelationType("learn", EntityType.USER, EntityType.COURSE)
WATCH = RelationType("watch", EntityType.USER, EntityType.VIDEO)
TAUGHT_BY = RelationType("taught_by", EntityType.COURSE, EntityType.TEACHER)
COURSE_VIDEO = RelationType("course_video", EntityType.COURSE, EntityType.VIDEO)
VIDEO_CONCEPT = RelationType("video_concept", EntityType.VIDEO, EntityType.CONCEPT)
COURSE_CONCEPT = RelationType("course_concept", EntityType.COURSE, EntityType.CONCEPT)

MOOC_SCHEMA = NetworkSchema(
    entity_types=frozenset(EntityType),
    relation_types=(CLICK, LEARN, WATCH, TAUGHT_BY, COURSE_VIDEO, VIDEO_CONCEPT, COURSE_CONCEPT),
)


@dataclass
class EdgeSet:
    """Edges observed under one relation name.

    Endpoint types are stored per edge so that a mis-typed edge can be loaded
    and then reported by :func:`validate_schema` instead of being dropped.
    """

    src_type: np.ndarray  # int8 codes into ENTITY_ORDER
    src: np.ndarray
    dst_type: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    def __len__(self) -> int:
        return len(self.src)

    @classmethod
    def empty(cls) -> "EdgeSet":
        z = np.zeros(0, dtype=np.int64)
        return cls(z.astype(np.int8), z, z.astype(np.int8), z, z.copy())


@dataclass
class ValidationReport:
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "schema ok"
        return "\n".join(self.violations)


class Hin:
    """Heterogeneous information network: typed entities plus typed edges.

    Entities are indexed densely per type in the order they were added. The
    object is treated as immutable once built; composed meta-path matrices
    are cached by meta-path name.
    """

    def __init__(self, schema: NetworkSchema, entities: Dict[EntityType, List[str]],
                 edges: Dict[str, EdgeSet], names: Optional[Dict[EntityType, List[str]]] = None,
                 manifest_counts: Optional[Dict[EntityType, int]] = None):
        self.schema = schema
        self.entities = {t: list(entities.get(t, [])) for t in ENTITY_ORDER}
        self.names = names or {t: list(ids) for t, ids in self.entities.items()}
        self.edges = dict(edges)
        self.manifest_counts = manifest_counts
        self._index = {t: {eid: i for i, eid in enumerate(ids)} for t, ids in self.entities.items()}
        self._cache: Dict[str, "PathAdjacency"] = {}
        self._lock = threading.Lock()
        self._report: Optional[ValidationReport] = None

    def count(self, etype: EntityType) -> int:
        return len(self.entities[etype])

    def index_of(self, etype: EntityType, external_id: str) -> int:
        return self._index[etype][external_id]

    def has_entity(self, etype: EntityType, external_id: str) -> bool:
        return external_id in self._index[etype]

    def edge_count(self, relation: str) -> int:
        return len(self.edges.get(relation, EdgeSet.empty()))

    def report(self) -> ValidationReport:
        if self._report is None:
            self._report = validate_schema(self)
        return self._report

    def require_valid(self) -> None:
        rep = self.report()
        if not rep.ok:
            raise SchemaError(f"graph failed validation: {rep.violations[0]}"
                              f" ({len(rep.violations)} violation(s))")

    def incidence(self, relation: str) -> sp.csr_matrix:
        """Binary src x dst incidence matrix of a relation."""
        rel = self.schema.relation(relation)
        shape = (self.count(rel.src), self.count(rel.dst))
        es = self.edges.get(relation, EdgeSet.empty())
        data = np.ones(len(es), dtype=np.int64)
        m = sp.csr_matrix((data, (es.src, es.dst)), shape=shape)
        m.sum_duplicates()
        m.data[:] = 1
        return m

    def weighted(self, relation: str) -> sp.csr_matrix:
        rel = self.schema.relation(relation)
        shape = (self.count(rel.src), self.count(rel.dst))
        es = self.edges.get(relation, EdgeSet.empty())
        m = sp.csr_matrix((es.weight.astype(np.float64), (es.src, es.dst)), shape=shape)
        m.sum_duplicates()
        return m

    def with_edges(self, edges: Dict[str, EdgeSet]) -> "Hin":
        """Copy sharing entities but with a replaced edge dict."""
        return Hin(self.schema, self.entities, edges, self.names, self.manifest_counts)


class HinBuilder:
    """Accumulates entities and edges; repeated edges add to the weight."""

    def __init__(self, schema: NetworkSchema = MOOC_SCHEMA):
        self.schema = schema
        self.entities: Dict[EntityType, List[str]] = {t: [] for t in ENTITY_ORDER}
        self.names: Dict[EntityType, List[str]] = {t: [] for t in ENTITY_ORDER}
        self._index: Dict[EntityType, Dict[str, int]] = {t: {} for t in ENTITY_ORDER}
        self._edges: Dict[str, Dict[Tuple[int, int, int, int], int]] = {}

    def add_entity(self, external_id: str, etype: EntityType, name: Optional[str] = None) -> int:
        idx = self._index[etype]
        if external_id in idx:
            raise ValueError(f"duplicate {etype.value} id {external_id!r}")
        idx[external_id] = len(self.entities[etype])
        self.entities[etype].append(external_id)
        self.names[etype].append(name if name is not None else external_id)
        return idx[external_id]

    def resolve(self, external_id: str, preferred: EntityType) -> Tuple[EntityType, int]:
        """Find an entity, preferring the declared type; KeyError if absent."""
        if external_id in self._index[preferred]:
            return preferred, self._index[preferred][external_id]
        for t in ENTITY_ORDER:
            if external_id in self._index[t]:
                return t, self._index[t][external_id]
        raise KeyError(external_id)

    def add_edge(self, relation: str, src_id: str, dst_id: str, count: int = 1) -> None:
        try:
            rel = self.schema.relation(relation)
            src_pref, dst_pref = rel.src, rel.dst
        except KeyError:
            src_pref, dst_pref = EntityType.USER, EntityType.USER
        st, si = self.resolve(src_id, src_pref)
        dt, di = self.resolve(dst_id, dst_pref)
        self.add_indexed_edge(relation, st, si, dt, di, count)

    def add_indexed_edge(self, relation: str, st: EntityType, si: int, dt: EntityType, di: int,
                         count: int = 1) -> None:
        key = (ENTITY_ORDER.index(st), si, ENTITY_ORDER.index(dt), di)
        bucket = self._edges.setdefault(relation, {})
        bucket[key] = bucket.get(key, 0) + int(count)

    def build(self, manifest_counts: Optional[Dict[EntityType, int]] = None) -> Hin:
        edges = {}
        for rel, bucket in self._edges.items():
            keys = sorted(bucket)
            arr = np.array(keys, dtype=np.int64).reshape(-1, 4)
            edges[rel] = EdgeSet(
                src_type=arr[:, 0].astype(np.int8), src=arr[:, 1],
                dst_type=arr[:, 2].astype(np.int8), dst=arr[:, 3],
                weight=np.array([bucket[k] for k in keys], dtype=np.int64),
            )
        return Hin(self.schema, self.entities, edges, self.names, manifest_counts)


def validate_schema(hin: Hin) -> ValidationReport:
    """Check every structural invariant; violations are collected, not raised."""
    rep = ValidationReport()
    schema = hin.schema
    n_types = len(schema.entity_types)
    n_rels = len(schema.relation_types)
    if n_types + n_rels <= 2:
        rep.violations.append(
            f"heterogeneity condition |N|+|R|>2 violated ({n_types} types, {n_rels} relations)")
    seen = set()
    for rel in schema.relation_types:
        key = (rel.name, rel.src, rel.dst)
        if key in seen:
            rep.violations.append(f"duplicate relation type {rel.name}")
        seen.add(key)
        for end in (rel.src, rel.dst):
            if end not in schema.entity_types:
                rep.violations.append(
                    f"relation {rel.name}: endpoint type {end.value} not declared in schema")
    if hin.manifest_counts is not None:
        for t, n in hin.manifest_counts.items():
            if hin.count(t) != n:
                rep.violations.append(
                    f"entity count mismatch for {t.value}: manifest {n}, graph {hin.count(t)}")
    for name, es in hin.edges.items():
        if not schema.has_relation(name):
            if len(es):
                rep.violations.append(f"edges under undeclared relation {name}")
            continue
        rel = schema.relation(name)
        want = (ENTITY_ORDER.index(rel.src), ENTITY_ORDER.index(rel.dst))
        bad = (es.src_type != want[0]) | (es.dst_type != want[1])
        for j in np.flatnonzero(bad)[:20]:
            st = ENTITY_ORDER[es.src_type[j]]
            dt = ENTITY_ORDER[es.dst_type[j]]
            rep.violations.append(
                f"endpoint type mismatch: relation {name} expects {rel.src.value}->{rel.dst.value}, "
                f"edge {_label(hin, st, es.src[j])}->{_label(hin, dt, es.dst[j])} "
                f"is {st.value}->{dt.value}")
        sizes = np.array([hin.count(t) for t in ENTITY_ORDER])
        for codes, idx, label in ((es.src_type, es.src, "source"), (es.dst_type, es.dst, "target")):
            out = (idx < 0) | (idx >= sizes[codes.astype(np.int64)])
            for j in np.flatnonzero(out)[:20]:
                rep.violations.append(f"relation {name}: {label} index {idx[j]} out of range")
        if len(es):
            keys = np.stack([es.src_type.astype(np.int64), es.src, es.dst_type.astype(np.int64), es.dst], 1)
            if len(np.unique(keys, axis=0)) != len(keys):
                rep.violations.append(f"relation {name}: duplicate edge triple")
        if np.any(es.weight < 1):
            rep.violations.append(f"relation {name}: edge weight below 1")
    return rep


def _label(hin: Hin, etype: EntityType, idx: int) -> str:
    ids = hin.entities[etype]
    return ids[idx] if 0 <= idx < len(ids) else f"#{idx}"


# ------------------------------------------------------------ meta-paths --

FORWARD = "forward"
INVERSE = "inverse"


@dataclass(frozen=True)
class MetaPathSpec:
    name: str
    steps: Tuple[Tuple[str, str], ...]
    anchor: EntityType

    def endpoints(self, schema: NetworkSchema) -> List[Tuple[EntityType, EntityType]]:
        out = []
        for rel_name, direction in self.steps:
            rel = schema.relation(rel_name)
            out.append((rel.src, rel.dst) if direction == FORWARD else (rel.dst, rel.src))
        return out

    def is_palindromic(self) -> bool:
        flipped = tuple((r, INVERSE if d == FORWARD else FORWARD) for r, d in reversed(self.steps))
        return flipped == self.steps


@dataclass
class PathAdjacency:
    meta_path: MetaPathSpec
    counts: sp.csr_matrix
    binary: sp.csr_matrix

    @property
    def size(self) -> int:
        return self.counts.shape[0]


def check_meta_path(schema: NetworkSchema, spec: MetaPathSpec) -> None:
    if not spec.steps:
        raise MetaPathError(f"{spec.name}: empty step list")
    for rel_name, direction in spec.steps:
        if direction not in (FORWARD, INVERSE):
            raise MetaPathError(f"{spec.name}: bad direction {direction!r}")
        if not schema.has_relation(rel_name):
            raise MetaPathError(f"{spec.name}: unknown relation {rel_name}")
    ends = spec.endpoints(schema)
    if ends[0][0] != spec.anchor:
        raise MetaPathError(f"{spec.name}: first step starts at {ends[0][0].value}, "
                            f"anchor is {spec.anchor.value}")
    if ends[-1][1] != spec.anchor:
        raise MetaPathError(f"{spec.name}: last step ends at {ends[-1][1].value}, "
                            f"anchor is {spec.anchor.value}")
    for i in range(len(ends) - 1):
        if ends[i][1] != ends[i + 1][0]:
            a, b = spec.steps[i], spec.steps[i + 1]
            raise MetaPathError(
                f"{spec.name}: steps {i} ({a[0]} {a[1]}) and {i + 1} ({b[0]} {b[1]}) are not "
                f"type-compatible: {ends[i][1].value} != {ends[i + 1][0].value}")


def step_matrix(hin: Hin, step: Tuple[str, str]) -> sp.csr_matrix:
    m = hin.incidence(step[0])
    return m if step[1] == FORWARD else m.T.tocsr()


def compose_meta_path(hin: Hin, spec: MetaPathSpec) -> PathAdjacency:
    """Commuting matrix of a meta-path over binarized step incidences.

    ``counts[i, j]`` is the number of path instances between anchors i and j;
    ``binary`` marks ``counts > 0`` off the diagonal.
    """
    hin.require_valid()
    check_meta_path(hin.schema, spec)
    with hin._lock:
        cached = hin._cache.get(spec.name)
    if cached is not None and cached.meta_path == spec:
        return cached
    counts = step_matrix(hin, spec.steps[0])
    for step in spec.steps[1:]:
        counts = counts @ step_matrix(hin, step)
    counts = sp.csr_matrix(counts, dtype=np.int64)
    counts.sum_duplicates()
    counts.eliminate_zeros()
    binary = counts.copy()
    binary.setdiag(0)
    binary.eliminate_zeros()
    binary.data[:] = 1
    adj = PathAdjacency(spec, counts, binary)
    with hin._lock:
        hin._cache[spec.name] = adj
    return adj


def _path(name: str, anchor: EntityType, *steps: Tuple[str, str]) -> MetaPathSpec:
    return MetaPathSpec(name, tuple(steps), anchor)


def user_meta_path_catalog() -> List[MetaPathSpec]:
    U = EntityType.USER
    return [
        _path("MP1", U, ("click", FORWARD), ("click", INVERSE)),
        _path("MP2", U, ("learn", FORWARD), ("learn", INVERSE)),
        _path("MP3", U, ("watch", FORWARD), ("watch", INVERSE)),
        _path("MP4", U, ("learn", FORWARD), ("taught_by", FORWARD),
              ("taught_by", INVERSE), ("learn", INVERSE)),
    ]


def concept_meta_path_catalog() -> List[MetaPathSpec]:
    K = EntityType.CONCEPT
    return [
        # concept-concept links realized as co-occurrence in a video
        _path("KK", K, ("video_concept", INVERSE), ("video_concept", FORWARD)),
        _path("KUK", K, ("click", INVERSE), ("click", FORWARD)),
        _path("KCK", K, ("course_concept", INVERSE), ("course_concept", FORWARD)),
    ]


def catalog_lookup(names: Iterable[str], catalog: Sequence[MetaPathSpec]) -> List[MetaPathSpec]:
    by_name = {s.name: s for s in catalog}
    out = []
    for n in names:
        if n not in by_name:
            raise MetaPathError(f"unknown meta-path {n!r}; choose from {sorted(by_name)}")
        out.append(by_name[n])
    return out


def homogeneous_adjacency(hin: Hin, anchor: EntityType) -> PathAdjacency:
    """Anchor-anchor links through any neighbour, ignoring relation types."""
    hin.require_valid()
    blocks = []
    for rel in hin.schema.relation_types:
        if rel.src == anchor and rel.dst != anchor:
            blocks.append(hin.incidence(rel.name))
        elif rel.dst == anchor and rel.src != anchor:
            blocks.append(hin.incidence(rel.name).T.tocsr())
    n = hin.count(anchor)
    if blocks:
        inc = sp.hstack(blocks, format="csr")
        counts = sp.csr_matrix(inc @ inc.T, dtype=np.int64)
    else:
        counts = sp.csr_matrix((n, n), dtype=np.int64)
    counts.eliminate_zeros()
    binary = counts.copy()
    binary.setdiag(0)
    binary.eliminate_zeros()
    binary.data[:] = 1
    spec = MetaPathSpec("homogeneous", (), anchor)
    return PathAdjacency(spec, counts, binary)
