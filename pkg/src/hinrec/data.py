"""TSV ingestion, train/test splitting and the synthetic MOOC log generator."""
from __future__ import annotations

import datetime as _dt
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .graph import ENTITY_ORDER, MOOC_SCHEMA, EdgeSet, EntityType, Hin, HinBuilder, NetworkSchema
from .ranker import RatingMatrix

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

ENTITY_HEADER = ("external_id", "entity_type", "display_name")
RELATION_HEADER = ("relation_name", "src_external_id", "dst_external_id", "count", "timestamp")
CLICK = "click"


class IngestError(ValueError):
    pass


def parse_timestamp(text: str) -> float:
    """Seconds since the epoch from an ISO-8601 date/datetime or a plain number."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    try:
        ts = _dt.datetime.fromisoformat(text)
    except ValueError:
        raise ValueError(f"malformed timestamp {text!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=_dt.timezone.utc)
    return ts.timestamp()


def format_timestamp(seconds: float) -> str:
    return _dt.datetime.fromtimestamp(seconds, tz=_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")


def _rows(path: Path, header: Sequence[str], min_cols: int):
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            return
        cols = [c.strip().lower() for c in first.rstrip("\r\n").split("\t")]
        cols = ["timestamp" if c == "timestamp_optional" else c for c in cols]
        if len(cols) < min_cols or cols[:min_cols] != list(header[:min_cols]):
            raise IngestError(f"{path}:1: expected header row starting {header[:min_cols]}")
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < min_cols:
                raise IngestError(f"{path}:{lineno}: expected at least {min_cols} columns, got {len(parts)}")
            yield lineno, parts


@dataclass
class Interactions:
    """Click events as parallel arrays, in file order."""

    users: np.ndarray
    concepts: np.ndarray
    counts: np.ndarray
    times: np.ndarray

    def __len__(self) -> int:
        return len(self.users)

    def take(self, mask) -> "Interactions":
        return Interactions(self.users[mask], self.concepts[mask], self.counts[mask], self.times[mask])


@dataclass
class DatasetBundle:
    hin: Hin
    events: Interactions          # every click event that was ingested
    train: RatingMatrix           # aggregated training clicks
    test: Interactions            # aggregated test positives, one per (user, concept)
    boundary: Optional[float]
    dropped_cold_start: int = 0
    dropped_seen: int = 0
    warnings: List[str] = field(default_factory=list)

    @property
    def n_users(self) -> int:
        return self.hin.count(EntityType.USER)

    @property
    def n_concepts(self) -> int:
        return self.hin.count(EntityType.CONCEPT)

    def summary(self) -> List[str]:
        lines = [f"entities\t{t.value}\t{self.hin.count(t)}" for t in ENTITY_ORDER]
        for rel in self.hin.schema.relation_types:
            lines.append(f"relation\t{rel.name}\t{self.hin.edge_count(rel.name)}")
        lines.append(f"split\ttrain_pairs\t{self.train.matrix.nnz}")
        lines.append(f"split\ttest_pairs\t{len(self.test)}")
        lines.append(f"split\tdropped_cold_start_users\t{self.dropped_cold_start}")
        lines.append(f"split\tdropped_seen_test_pairs\t{self.dropped_seen}")
        return lines

    def train_observed(self, u: int) -> np.ndarray:
        return self.train.observed(u)


def read_entities(path: PathLike, builder: HinBuilder) -> Dict[EntityType, int]:
    path = Path(path)
    counts = {t: 0 for t in ENTITY_ORDER}
    for lineno, parts in _rows(path, ENTITY_HEADER, 2):
        try:
            etype = EntityType.parse(parts[1])
        except ValueError as exc:
            raise IngestError(f"{path}:{lineno}: {exc}") from None
        name = parts[2] if len(parts) > 2 else parts[0]
        try:
            builder.add_entity(parts[0], etype, name)
        except ValueError as exc:
            raise IngestError(f"{path}:{lineno}: {exc}") from None
        counts[etype] += 1
    return counts


def read_relations(path: PathLike, builder: HinBuilder, time_required: bool = False):
    """Yield (relation, src type, src idx, dst type, dst idx, count, time or None)."""
    path = Path(path)
    for lineno, parts in _rows(path, RELATION_HEADER, 3):
        rel = parts[0]
        try:
            r = builder.schema.relation(rel)
            prefs = (r.src, r.dst)
        except KeyError:
            raise IngestError(f"{path}:{lineno}: unknown relation {rel!r}") from None
        try:
            st, si = builder.resolve(parts[1], prefs[0])
        except KeyError:
            raise IngestError(f"{path}:{lineno}: unknown entity id {parts[1]!r}") from None
        try:
            dt, di = builder.resolve(parts[2], prefs[1])
        except KeyError:
            raise IngestError(f"{path}:{lineno}: unknown entity id {parts[2]!r}") from None
        count = 1
        if len(parts) > 3 and parts[3].strip():
            try:
                count = int(parts[3])
            except ValueError:
                raise IngestError(f"{path}:{lineno}: bad count {parts[3]!r}") from None
            if count < 1:
                raise IngestError(f"{path}:{lineno}: count must be >= 1")
        when = None
        if len(parts) > 4 and parts[4].strip():
            try:
                when = parse_timestamp(parts[4])
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None
        elif time_required:
            raise IngestError(f"{path}:{lineno}: timestamp required for interactions")
        yield rel, st, si, dt, di, count, when


def ingest(entity_manifest: PathLike, relation_files: Iterable[PathLike], interaction_file: PathLike,
           boundary: Union[str, float, None] = None, split: str = "temporal",
           schema: NetworkSchema = MOOC_SCHEMA) -> DatasetBundle:
    """Load TSV files into a validated graph plus train/test click splits.

    ``split`` is ``temporal`` (events before ``boundary`` train, the rest
    test) or ``leave_last`` (each user's latest event is the test target).
    Only training clicks enter the graph's click relation.
    """
    builder = HinBuilder(schema)
    manifest = read_entities(entity_manifest, builder)
    for rf in relation_files:
        for rel, st, si, dt, di, count, _ in read_relations(rf, builder):
            builder.add_indexed_edge(rel, st, si, dt, di, count)
    users, concepts, counts, times = [], [], [], []
    for rel, st, si, dt, di, count, when in read_relations(interaction_file, builder, time_required=True):
        if rel != CLICK or st != EntityType.USER or dt != EntityType.CONCEPT:
            raise IngestError(f"{interaction_file}: interaction rows must be user click concept, got {rel}")
        users.append(si)
        concepts.append(di)
        counts.append(count)
        times.append(when)
    events = Interactions(np.array(users, dtype=np.int64), np.array(concepts, dtype=np.int64),
                          np.array(counts, dtype=np.int64), np.array(times, dtype=np.float64))
    if len(events) == 0:
        raise IngestError("no training positives: interaction file is empty")
    warnings = []
    if isinstance(boundary, str):
        try:
            boundary = parse_timestamp(boundary)
        except ValueError as exc:
            raise IngestError(f"boundary: {exc}") from None
    if split == "temporal":
        if boundary is None:
            raise IngestError("temporal split needs a boundary timestamp")
        is_test = events.times >= boundary
    elif split == "leave_last":
        is_test = np.zeros(len(events), dtype=bool)
        order = np.lexsort((np.arange(len(events)), events.times, events.users))
        last = np.ones(len(order), dtype=bool)
        last[:-1] = events.users[order[:-1]] != events.users[order[1:]]
        is_test[order[last]] = True
    else:
        raise IngestError(f"unknown split {split!r}")
    train_ev = events.take(~is_test)
    test_ev = events.take(is_test)
    if len(train_ev) == 0:
        raise IngestError("no training positives before the boundary")
    if len(test_ev) == 0:
        warnings.append("all events precede the boundary: test split is empty")
        log.warning(warnings[-1])
    for u, k, c in zip(train_ev.users, train_ev.concepts, train_ev.counts):
        builder.add_indexed_edge(CLICK, EntityType.USER, int(u), EntityType.CONCEPT, int(k), int(c))
    hin = builder.build(manifest_counts=manifest)
    m, n = hin.count(EntityType.USER), hin.count(EntityType.CONCEPT)
    train = sp.csr_matrix((train_ev.counts.astype(np.float64), (train_ev.users, train_ev.concepts)),
                          shape=(m, n))
    train.sum_duplicates()
    train_users = np.zeros(m, dtype=bool)
    train_users[train_ev.users] = True
    # aggregate test events per (user, concept), keep the earliest time
    test_m = sp.coo_matrix((test_ev.counts.astype(np.float64), (test_ev.users, test_ev.concepts)),
                           shape=(m, n)).tocsr()
    test_m.sum_duplicates()
    coo = test_m.tocoo()
    order = np.lexsort((coo.col, coo.row))
    tu, tk, tc = coo.row[order].astype(np.int64), coo.col[order].astype(np.int64), coo.data[order]
    cold = ~train_users[tu]
    dropped_cold = len(np.unique(tu[cold]))
    seen = np.asarray(train[tu, tk]).ravel() > 0 if len(tu) else np.zeros(0, dtype=bool)
    keep = ~cold & ~seen
    first_time = {}
    for u, k, t in zip(test_ev.users, test_ev.concepts, test_ev.times):
        key = (int(u), int(k))
        first_time[key] = min(t, first_time.get(key, t))
    test = Interactions(tu[keep], tk[keep], tc[keep].astype(np.int64),
                        np.array([first_time[(int(u), int(k))] for u, k in zip(tu[keep], tk[keep])],
                                 dtype=np.float64))
    if dropped_cold:
        log.info("dropped %d test-only users", dropped_cold)
    bundle = DatasetBundle(hin, events, RatingMatrix(train), test, boundary, dropped_cold,
                           int((~cold & seen).sum()), warnings)
    rep = hin.report()
    if not rep.ok:
        raise IngestError(f"schema validation failed: {rep.violations[0]}")
    return bundle


def ingest_dir(data_dir: PathLike, boundary=None, split: str = "temporal") -> DatasetBundle:
    d = Path(data_dir)
    return ingest(d / "entities.tsv", [d / "relations.tsv"], d / "interactions.tsv", boundary, split)


# ----------------------------------------------------------------- export --

def atomic_write_text(path: PathLike, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _entity_text(hin: Hin) -> str:
    lines = ["\t".join(ENTITY_HEADER)]
    for t in ENTITY_ORDER:
        for eid, name in zip(hin.entities[t], hin.names[t]):
            lines.append(f"{eid}\t{t.value}\t{name}")
    return "\n".join(lines) + "\n"


def _relation_text(hin: Hin, skip: Sequence[str] = (CLICK,)) -> str:
    lines = ["\t".join(RELATION_HEADER)]
    for rel in hin.schema.relation_types:
        if rel.name in skip:
            continue
        es = hin.edges.get(rel.name, EdgeSet.empty())
        for j in range(len(es)):
            st, dt = ENTITY_ORDER[es.src_type[j]], ENTITY_ORDER[es.dst_type[j]]
            lines.append(f"{rel.name}\t{hin.entities[st][es.src[j]]}\t{hin.entities[dt][es.dst[j]]}"
                         f"\t{es.weight[j]}\t")
    return "\n".join(lines) + "\n"


def _interaction_text(hin: Hin, ev: Interactions) -> str:
    users, concepts = hin.entities[EntityType.USER], hin.entities[EntityType.CONCEPT]
    lines = ["\t".join(RELATION_HEADER)]
    for u, k, c, t in zip(ev.users, ev.concepts, ev.counts, ev.times):
        lines.append(f"{CLICK}\t{users[u]}\t{concepts[k]}\t{c}\t{format_timestamp(t)}")
    return "\n".join(lines) + "\n"


def export_bundle(bundle: DatasetBundle, out_dir: PathLike) -> None:
    """Write a bundle back in ingestion format (all events, not just train)."""
    out = Path(out_dir)
    atomic_write_text(out / "entities.tsv", _entity_text(bundle.hin))
    atomic_write_text(out / "relations.tsv", _relation_text(bundle.hin))
    atomic_write_text(out / "interactions.tsv", _interaction_text(bundle.hin, bundle.events))


# -------------------------------------------------------------- synthetic --

@dataclass
class SyntheticSpec:
    users: int = 500
    concepts: int = 200
    courses: int = 40
    videos: int = 200
    teachers: int = 12
    blocks: int = 4
    p_within: float = 0.3
    p_cross: float = 0.01
    seed: int = 0
    courses_per_user: int = 3
    concepts_per_course: int = 10
    watch_prob: float = 0.5
    start: str = "2016-10-01"
    end: str = "2018-03-31"

    def __post_init__(self):
        if not self.p_within > self.p_cross:
            raise ValueError("within-block probability must exceed cross-block probability")
        if not (0 <= self.p_cross and self.p_within <= 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.blocks < 1:
            raise ValueError("need at least one block")
        for name in ("users", "concepts", "courses", "videos", "teachers"):
            if getattr(self, name) < self.blocks:
                raise ValueError(f"{name} must be at least the number of blocks")


def _assign_blocks(rng: np.random.Generator, n: int, blocks: int) -> np.ndarray:
    return rng.permutation(np.arange(n) % blocks)


def generate_synthetic(spec: SyntheticSpec, out_dir: PathLike) -> Dict[str, np.ndarray]:
    """Write a planted-block MOOC corpus; returns the block assignments.

    Users click concepts of their own block with ``p_within`` and others with
    ``p_cross``. Courses, videos and teachers are block-aligned so that every
    meta-path carries some of the same structure.
    """
    rng = np.random.default_rng(spec.seed)
    B = spec.blocks
    ub = _assign_blocks(rng, spec.users, B)
    kb = _assign_blocks(rng, spec.concepts, B)
    cb = _assign_blocks(rng, spec.courses, B)
    vb = _assign_blocks(rng, spec.videos, B)
    tb = _assign_blocks(rng, spec.teachers, B)
    uid = [f"u{i:05d}" for i in range(spec.users)]
    kid = [f"k{i:05d}" for i in range(spec.concepts)]
    cid = [f"c{i:05d}" for i in range(spec.courses)]
    vid = [f"v{i:05d}" for i in range(spec.videos)]
    tid = [f"t{i:05d}" for i in range(spec.teachers)]

    ent = ["\t".join(ENTITY_HEADER)]
    for ids, etype in ((uid, EntityType.USER), (cid, EntityType.COURSE), (vid, EntityType.VIDEO),
                       (tid, EntityType.TEACHER), (kid, EntityType.CONCEPT)):
        ent += [f"{i}\t{etype.value}\t{etype.value.lower()} {i}" for i in ids]

    by_block = lambda labels, b: np.flatnonzero(labels == b)  # noqa: E731
    rel = ["\t".join(RELATION_HEADER)]
    course_concepts = []
    course_teacher = np.empty(spec.courses, dtype=np.int64)
    for c in range(spec.courses):
        pool = by_block(tb, cb[c])
        course_teacher[c] = rng.choice(pool)
        kpool = by_block(kb, cb[c])
        take = min(spec.concepts_per_course, len(kpool))
        course_concepts.append(np.sort(rng.choice(kpool, size=take, replace=False)))
    for c in range(spec.courses):
        rel.append(f"taught_by\t{cid[c]}\t{tid[course_teacher[c]]}\t1\t")
    for c in range(spec.courses):
        for k in course_concepts[c]:
            rel.append(f"course_concept\t{cid[c]}\t{kid[k]}\t1\t")
    video_course = np.empty(spec.videos, dtype=np.int64)
    for v in range(spec.videos):
        video_course[v] = rng.choice(by_block(cb, vb[v]))
    for v in range(spec.videos):
        rel.append(f"course_video\t{cid[video_course[v]]}\t{vid[v]}\t1\t")
    for v in range(spec.videos):
        pool = course_concepts[video_course[v]]
        n_k = int(rng.integers(1, min(3, len(pool)) + 1))
        for k in np.sort(rng.choice(pool, size=n_k, replace=False)):
            rel.append(f"video_concept\t{vid[v]}\t{kid[k]}\t1\t")
    videos_of = [np.flatnonzero(video_course == c) for c in range(spec.courses)]
    stay = spec.p_within / (spec.p_within + spec.p_cross * max(B - 1, 0)) if B > 1 else 1.0
    for u in range(spec.users):
        chosen = set()
        for _ in range(spec.courses_per_user):
            b = ub[u] if rng.random() < stay else int(rng.integers(0, B))
            chosen.add(int(rng.choice(by_block(cb, b))))
        for c in sorted(chosen):
            rel.append(f"learn\t{uid[u]}\t{cid[c]}\t1\t")
            for v in videos_of[c]:
                if rng.random() < spec.watch_prob:
                    rel.append(f"watch\t{uid[u]}\t{vid[v]}\t1\t")

    t0, t1 = parse_timestamp(spec.start), parse_timestamp(spec.end)
    inter = ["\t".join(RELATION_HEADER)]
    same = ub[:, None] == kb[None, :]
    prob = np.where(same, spec.p_within, spec.p_cross)
    clicks = rng.random((spec.users, spec.concepts)) < prob
    counts = 1 + rng.poisson(1.0, size=clicks.shape)
    times = rng.uniform(t0, t1, size=clicks.shape)
    for u, k in zip(*np.nonzero(clicks)):
        inter.append(f"click\t{uid[u]}\t{kid[k]}\t{counts[u, k]}\t{format_timestamp(round(times[u, k]))}")

    out = Path(out_dir)
    atomic_write_text(out / "entities.tsv", "\n".join(ent) + "\n")
    atomic_write_text(out / "relations.tsv", "\n".join(rel) + "\n")
    atomic_write_text(out / "interactions.tsv", "\n".join(inter) + "\n")
    return {"users": ub, "concepts": kb, "courses": cb, "videos": vb, "teachers": tb}
