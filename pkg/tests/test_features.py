import logging

import numpy as np
import pytest

from hinrec.features import (FeatureFileError, build_context_relations, features_from_source,
                             hashed_features, load_embedding_features, one_hot_features)
from hinrec.graph import MOOC_SCHEMA, EntityType, HinBuilder, NetworkSchema, SchemaError

from _util import random_hin

U, K, C, V, T = (EntityType.USER, EntityType.CONCEPT, EntityType.COURSE, EntityType.VIDEO,
                 EntityType.TEACHER)


def concepts_hin(n):
    b = HinBuilder()
    for i in range(n):
        b.add_entity(f"k{i}", K)
    return b.build()


def write_tsv(path, rows):
    path.write_text("".join("\t".join(map(str, r)) + "\n" for r in rows), encoding="utf-8")


# ----------------------------------------------------------------- one-hot --

def test_one_hot_three_users():
    hin = random_hin(np.random.default_rng(0), {U: 3, K: 1, C: 1, V: 1, T: 1})
    fm = one_hot_features(U, hin)
    np.testing.assert_array_equal(fm.rows, np.eye(3))
    assert np.all(fm.rows.sum(axis=1) == 1.0)


def test_one_hot_empty():
    fm = one_hot_features(U, concepts_hin(2))
    assert fm.rows.shape == (0, 0)


# ------------------------------------------------------------------ hashed --

def test_hashed_is_deterministic_and_bounded():
    hin = concepts_hin(100)
    a = hashed_features(K, hin, 4, seed=3).rows
    b = hashed_features(K, hin, 4, seed=3).rows
    np.testing.assert_array_equal(a, b)
    assert a.shape == (100, 4)
    assert np.all(np.isfinite(a)) and np.all(np.abs(a) <= 1.0)


def test_hashed_seed_changes_every_row():
    hin = concepts_hin(100)
    a = hashed_features(K, hin, 8, seed=0).rows
    b = hashed_features(K, hin, 8, seed=1).rows
    assert np.all(np.any(a != b, axis=1))


def test_hashed_wide_rows_span_several_digests():
    hin = concepts_hin(3)
    rows = hashed_features(K, hin, 20, seed=0).rows
    assert rows.shape == (3, 20)
    assert len(np.unique(rows)) == rows.size


def test_hashed_rejects_zero_width():
    with pytest.raises(ValueError):
        hashed_features(K, concepts_hin(1), 0)


# --------------------------------------------------------------- embedding --

def test_embedding_full_file(tmp_path):
    hin = concepts_hin(1029)
    vecs = np.random.default_rng(0).normal(size=(1029, 100))
    write_tsv(tmp_path / "emb.tsv", [[f"k{i}"] + [repr(float(v)) for v in vecs[i]] for i in range(1029)])
    fm = load_embedding_features(tmp_path / "emb.tsv", K, hin)
    assert fm.rows.shape == (1029, 100)
    assert fm.fallback_ids == []
    np.testing.assert_array_equal(fm.rows, vecs)


def test_embedding_rows_realigned_to_index(tmp_path):
    hin = concepts_hin(3)
    write_tsv(tmp_path / "e.tsv", [["k2", 2, 2], ["k0", 0, 0], ["k1", 1, 1]])
    rows = load_embedding_features(tmp_path / "e.tsv", K, hin).rows
    np.testing.assert_array_equal(rows, [[0, 0], [1, 1], [2, 2]])


def test_embedding_empty_file_falls_back(tmp_path, caplog):
    hin = concepts_hin(5)
    (tmp_path / "e.tsv").write_text("")
    with caplog.at_level(logging.WARNING):
        fm = load_embedding_features(tmp_path / "e.tsv", K, hin, fallback_width=6)
    assert len(fm.fallback_ids) == 5
    assert fm.rows.shape == (5, 6)
    np.testing.assert_array_equal(fm.rows, hashed_features(K, hin, 6, 0).rows)
    assert "5" in caplog.text


def test_embedding_unknown_id(tmp_path):
    write_tsv(tmp_path / "e.tsv", [["k0", 1.0], ["ghost", 2.0]])
    with pytest.raises(FeatureFileError, match="ghost"):
        load_embedding_features(tmp_path / "e.tsv", K, concepts_hin(2))


def test_embedding_non_numeric_reports_line(tmp_path):
    write_tsv(tmp_path / "e.tsv", [["k0", 1.0, 2.0], ["k1", 1.0, "abc"]])
    with pytest.raises(FeatureFileError, match=r"e\.tsv:2: non-numeric token 'abc'"):
        load_embedding_features(tmp_path / "e.tsv", K, concepts_hin(2))


def test_embedding_width_mismatch_reports_line(tmp_path):
    write_tsv(tmp_path / "e.tsv", [["k0", 1.0, 2.0], ["k1", 1.0]])
    with pytest.raises(FeatureFileError, match=":2: width 1 differs from 2"):
        load_embedding_features(tmp_path / "e.tsv", K, concepts_hin(2))


def test_features_from_source(tmp_path):
    hin = concepts_hin(3)
    assert features_from_source("one_hot", K, hin).rows.shape == (3, 3)
    np.testing.assert_array_equal(features_from_source("hashed:5:7", K, hin).rows,
                                  hashed_features(K, hin, 5, 7).rows)
    write_tsv(tmp_path / "e.tsv", [["k0", 1.0]])
    assert features_from_source(f"embedding:{tmp_path / 'e.tsv'}", K, hin).rows.shape == (3, 1)
    with pytest.raises(ValueError):
        features_from_source("word2vec", K, hin)


# -------------------------------------------------------- context relations --

def relations_hin(edges, users=2, courses=2, teachers=2):
    b = HinBuilder()
    for t, n, p in ((U, users, "u"), (C, courses, "c"), (T, teachers, "t"), (K, 1, "k"), (V, 1, "v")):
        for i in range(n):
            b.add_entity(f"{p}{i}", t)
    for rel, s, d in edges:
        b.add_edge(rel, s, d)
    return b.build()


def test_r4_from_learn_and_taught_by():
    hin = relations_hin([("learn", "u0", "c0"), ("taught_by", "c0", "t0")])
    ctx = build_context_relations(hin)
    assert ctx.r4_user_course_teacher[0, 0] == 1
    assert ctx.r4_user_course_teacher.shape == (2, 2)


def test_r4_is_binarized():
    hin = relations_hin([("learn", "u0", "c0"), ("learn", "u0", "c1"),
                         ("taught_by", "c0", "t0"), ("taught_by", "c1", "t0")])
    assert build_context_relations(hin).r4_user_course_teacher[0, 0] == 1


def test_user_without_events_has_zero_rows():
    hin = relations_hin([("learn", "u0", "c0"), ("taught_by", "c0", "t0"), ("click", "u0", "k0"),
                         ("watch", "u0", "v0")])
    ctx = build_context_relations(hin)
    for m in (ctx.r1_user_click_concept, ctx.r2_user_learn_course, ctx.r3_user_watch_video,
              ctx.r4_user_course_teacher):
        assert m.getrow(1).nnz == 0
        assert set(np.unique(m.toarray())) <= {0, 1}


def test_r1_matches_click_incidence():
    hin = random_hin(np.random.default_rng(4), p=0.5)
    ctx = build_context_relations(hin)
    np.testing.assert_array_equal(ctx.r1_user_click_concept.toarray(), hin.incidence("click").toarray())
    assert ctx.r3_user_watch_video.shape == (hin.count(U), hin.count(V))


def test_missing_relation_is_named():
    schema = NetworkSchema(MOOC_SCHEMA.entity_types,
                           tuple(r for r in MOOC_SCHEMA.relation_types if r.name != "watch"))
    with pytest.raises(SchemaError, match="watch"):
        build_context_relations(HinBuilder(schema).build())
