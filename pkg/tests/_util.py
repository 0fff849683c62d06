import numpy as np

from hinrec.features import hashed_features, one_hot_features
from hinrec.graph import MOOC_SCHEMA, EntityType, HinBuilder, concept_meta_path_catalog, user_meta_path_catalog
from hinrec.trainer import SampleBatch, build_model

PREFIX = {EntityType.USER: "u", EntityType.CONCEPT: "k", EntityType.COURSE: "c",
          EntityType.VIDEO: "v", EntityType.TEACHER: "t"}


def random_hin(rng, sizes=None, p=0.4):
    sizes = sizes or {EntityType.USER: 5, EntityType.CONCEPT: 5, EntityType.COURSE: 3,
                      EntityType.VIDEO: 4, EntityType.TEACHER: 2}
    b = HinBuilder()
    for t, n in sizes.items():
        for i in range(n):
            b.add_entity(f"{PREFIX[t]}{i}", t)
    for rel in MOOC_SCHEMA.relation_types:
        for i in range(sizes.get(rel.src, 0)):
            for j in range(sizes.get(rel.dst, 0)):
                if rng.random() < p:
                    b.add_edge(rel.name, f"{PREFIX[rel.src]}{i}", f"{PREFIX[rel.dst]}{j}",
                               int(rng.integers(1, 4)))
    return b.build()


def small_model(seed=0, n_paths=2, d=3, D=2, layers=3, p=0.4, feat_width=4, **kw):
    rng = np.random.default_rng(seed)
    hin = random_hin(rng, p=p)
    uf = hashed_features(EntityType.USER, hin, feat_width, seed)
    kf = hashed_features(EntityType.CONCEPT, hin, feat_width, seed + 1)
    model = build_model(hin, uf, kf, user_meta_path_catalog()[:n_paths],
                        concept_meta_path_catalog()[:n_paths], d=d, D=D, layers=layers,
                        seed=seed, init_scale=0.5, **kw)
    return hin, model


def random_batch(rng, n_users=5, n_concepts=5, size=12):
    users = rng.integers(0, n_users, size)
    concepts = rng.integers(0, n_concepts, size)
    neg = rng.random(size) < 0.5
    targets = np.where(neg, 0.0, rng.integers(1, 4, size).astype(float))
    return SampleBatch(users, concepts, targets, neg)


def finite_difference(f, arr, step=1e-5):
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f()
        flat[i] = old - step
        lo = f()
        flat[i] = old
        gf[i] = (hi - lo) / (2 * step)
    return g


def rel_error(a, b):
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return num / den


ACCEPTANCE_LINES = []
