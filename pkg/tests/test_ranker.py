import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hinrec.ranker import MfParams, Recommender, predict_rating, top_n_from_scores


def rand_params(rng, m=4, n=6, D=3, d=2):
    p = MfParams.init(m, n, D, d, rng, scale=1.0)
    p.beta_u[...] = rng.uniform(0, 2)
    p.beta_k[...] = rng.uniform(0, 2)
    return p, rng.normal(size=(m, d)), rng.normal(size=(n, d))


def test_zero_params_score_zero():
    p = MfParams.zeros(2, 2, 2, 2)
    assert predict_rating(p, np.ones(2), np.ones(2), 0, 1) == 0.0


def test_latent_dot_product():
    p = MfParams.zeros(1, 1, 2, 2)
    p.x[0] = [1, 2]
    p.y[0] = [3, 4]
    assert predict_rating(p, np.zeros(2), np.zeros(2), 0, 0) == 11.0


def test_user_bridge_term():
    p = MfParams.zeros(1, 1, 2, 2)
    p.beta_u[...] = 1.0
    p.t_k[0] = [0.5, 9]
    assert predict_rating(p, np.array([1.0, 0.0]), np.zeros(2), 0, 0) == 0.5


def test_out_of_range_rejected():
    p = MfParams.zeros(2, 3, 2, 2)
    with pytest.raises(IndexError):
        predict_rating(p, np.zeros(2), np.zeros(2), 2, 0)
    with pytest.raises(IndexError):
        predict_rating(p, np.zeros(2), np.zeros(2), 0, -1)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), which=st.sampled_from(["x", "y", "t_u", "t_k"]))
def test_linear_in_each_factor(seed, which):
    rng = np.random.default_rng(seed)
    p, eu, ek = rand_params(rng)
    u, k = 1, 3

    def term(params):
        # contribution of the factor in question alone
        if which in ("x", "y"):
            return params.x[u] @ params.y[k]
        if which == "t_k":
            return float(params.beta_u) * (eu[u] @ params.t_k[k])
        return float(params.beta_k) * (params.t_u[u] @ ek[k])

    base = predict_rating(p, eu[u], ek[k], u, k)
    row = k if which in ("y", "t_k") else u
    getattr(p, which)[row] *= 2.0
    doubled = predict_rating(p, eu[u], ek[k], u, k)
    getattr(p, which)[row] /= 2.0
    assert doubled - base == pytest.approx(term(p), rel=1e-9, abs=1e-12)


def test_batch_equals_single_calls():
    rng = np.random.default_rng(0)
    p, eu, ek = rand_params(rng, n=100)
    rec = Recommender(p, eu, ek)
    cand = rng.permutation(100)
    batch = rec.predict_all_for_user(2, cand)
    single = [predict_rating(p, eu[2], ek[k], 2, int(k)) for k in cand]
    np.testing.assert_allclose(batch, single, rtol=0, atol=1e-12)
    assert len(rec.predict_all_for_user(2, [])) == 0
    dup = rec.predict_all_for_user(2, [5, 5, 1])
    assert dup[0] == dup[1]


def test_top_n_examples():
    assert top_n_from_scores(np.array([0.9, 0.1, 0.5]), 2).concepts == [0, 2]
    assert top_n_from_scores(np.zeros(6), 4).concepts == [0, 1, 2, 3]
    t = top_n_from_scores(np.ones(3), 2, exclude=[0, 1, 2])
    assert t.concepts == [] and t.exhausted


def test_top_n_flags_short_catalog():
    t = top_n_from_scores(np.array([0.1, 0.2, 0.3]), 10, exclude=[1])
    assert t.concepts == [2, 0] and t.exhausted
    assert not top_n_from_scores(np.arange(5.0), 3).exhausted


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 40), N=st.integers(1, 45),
       a=st.floats(0.01, 100), b=st.floats(-100, 100))
def test_top_n_affine_invariant_and_respects_exclusions(seed, n, N, a, b):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 5, n).astype(float)  # many ties
    exclude = set(rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False).tolist())
    t = top_n_from_scores(scores, N, exclude)
    assert t.concepts == top_n_from_scores(a * scores + b, N, exclude).concepts
    assert not set(t.concepts) & exclude
    assert all(0 <= c < n for c in t.concepts)
    # brute-force oracle
    want = sorted((c for c in range(n) if c not in exclude), key=lambda c: (-scores[c], c))[:N]
    assert t.concepts == want


def test_recommender_top_n_uses_all_concepts():
    rng = np.random.default_rng(1)
    p, eu, ek = rand_params(rng)
    rec = Recommender(p, eu, ek)
    scores = np.array([rec.predict_rating(0, k) for k in range(6)])
    assert rec.top_n(0, 3, exclude=[int(np.argmax(scores))]).concepts == \
        top_n_from_scores(scores, 3, [int(np.argmax(scores))]).concepts
