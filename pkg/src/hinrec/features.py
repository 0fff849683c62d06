"""Content feature matrices and the user context relations."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Union

import numpy as np
import scipy.sparse as sp

from .graph import EntityType, Hin, SchemaError

log = logging.getLogger(__name__)

EMBEDDING = "embedding_file"
ONE_HOT = "one_hot"
HASHED = "hashed"


class FeatureFileError(ValueError):
    pass


@dataclass
class FeatureMatrix:
    entity_type: EntityType
    rows: np.ndarray
    source: str
    fallback_ids: List[str] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.rows.shape[1]


def _hashed_row(external_id: str, width: int, seed: int) -> np.ndarray:
    # blake2b gives platform-independent bytes; 8 bytes per value
    out = np.empty(width)
    filled = 0
    block = 0
    while filled < width:
        h = hashlib.blake2b(f"{seed}\x1f{external_id}\x1f{block}".encode("utf-8"), digest_size=64)
        words = np.frombuffer(h.digest(), dtype="<u8")
        take = min(len(words), width - filled)
        out[filled:filled + take] = words[:take] / float(2 ** 64 - 1) * 2.0 - 1.0
        filled += take
        block += 1
    return out


def hashed_features(entity_type: EntityType, hin: Hin, width: int, seed: int = 0) -> FeatureMatrix:
    """Deterministic pseudo-random rows in [-1, 1] keyed by (external id, seed)."""
    if width <= 0:
        raise ValueError("width must be positive")
    ids = hin.entities[entity_type]
    rows = np.empty((len(ids), width))
    for i, eid in enumerate(ids):
        rows[i] = _hashed_row(eid, width, seed)
    return FeatureMatrix(entity_type, rows, HASHED)


def one_hot_features(entity_type: EntityType, hin: Hin) -> FeatureMatrix:
    n = hin.count(entity_type)
    return FeatureMatrix(entity_type, np.eye(n), ONE_HOT)


def load_embedding_features(path: Union[str, Path], entity_type: EntityType, hin: Hin,
                            fallback_width: int = 100, seed: int = 0) -> FeatureMatrix:
    """Read an id-keyed embedding TSV and align it to the entity index.

    Entities missing from the file get hashed rows; their ids are listed in
    ``fallback_ids``.
    """
    path = Path(path)
    vectors = {}
    width = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            eid = parts[0]
            try:
                vec = np.array([float(tok) for tok in parts[1:]])
            except ValueError:
                bad = next(tok for tok in parts[1:] if not _is_float(tok))
                raise FeatureFileError(f"{path}:{lineno}: non-numeric token {bad!r}") from None
            if width is None:
                width = len(vec)
                if width == 0:
                    raise FeatureFileError(f"{path}:{lineno}: row has no values")
            elif len(vec) != width:
                raise FeatureFileError(
                    f"{path}:{lineno}: width {len(vec)} differs from {width}")
            if not np.all(np.isfinite(vec)):
                raise FeatureFileError(f"{path}:{lineno}: non-finite value")
            if not hin.has_entity(entity_type, eid):
                raise FeatureFileError(f"{path}:{lineno}: unknown {entity_type.value} id {eid!r}")
            vectors[eid] = vec
    if width is None:
        width = fallback_width
    ids = hin.entities[entity_type]
    rows = np.empty((len(ids), width))
    missing = []
    for i, eid in enumerate(ids):
        if eid in vectors:
            rows[i] = vectors[eid]
        else:
            rows[i] = _hashed_row(eid, width, seed)
            missing.append(eid)
    if missing:
        log.warning("%s: %d %s entities missing, filled with hashed features",
                    path, len(missing), entity_type.value)
    return FeatureMatrix(entity_type, rows, EMBEDDING, missing)


def _is_float(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def features_from_source(source: str, entity_type: EntityType, hin: Hin) -> FeatureMatrix:
    """Build features from a config string: ``one_hot``, ``hashed:<w>:<seed>``, ``embedding:<path>``."""
    if source == "one_hot":
        return one_hot_features(entity_type, hin)
    if source.startswith("hashed:"):
        parts = source.split(":")
        if len(parts) != 3:
            raise ValueError(f"expected hashed:<width>:<seed>, got {source!r}")
        return hashed_features(entity_type, hin, int(parts[1]), int(parts[2]))
    if source.startswith("embedding:"):
        return load_embedding_features(source[len("embedding:"):], entity_type, hin)
    raise ValueError(f"unknown feature source {source!r}")


@dataclass
class ContextRelationSet:
    r1_user_click_concept: sp.csr_matrix
    r2_user_learn_course: sp.csr_matrix
    r3_user_watch_video: sp.csr_matrix
    r4_user_course_teacher: sp.csr_matrix


REQUIRED_RELATIONS = ("click", "learn", "watch", "taught_by")


def build_context_relations(hin: Hin) -> ContextRelationSet:
    hin.require_valid()
    for name in REQUIRED_RELATIONS:
        if not hin.schema.has_relation(name):
            raise SchemaError(f"required relation {name!r} missing from schema")
    learn = hin.incidence("learn")
    r4 = sp.csr_matrix(learn @ hin.incidence("taught_by"))
    r4.eliminate_zeros()
    r4.data[:] = 1
    return ContextRelationSet(hin.incidence("click"), learn, hin.incidence("watch"), r4)
