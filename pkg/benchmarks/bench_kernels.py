"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py            # kernel micro-benchmarks
    python3 benchmarks/bench_kernels.py --epoch    # plus one training epoch per backend

The epoch comparison runs a subprocess per backend because the backend is
fixed at import time by HINREC_DISABLE_NUMBA.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from hinrec import _kernels


def best_of(fn, repeat=7):
    fn()  # warm-up, triggers JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    # shapes of one training batch (512 samples, d=100) and one evaluation pass
    B, m, n, d = 512, 500, 200, 100
    users = rng.integers(0, m, B)
    concepts = rng.integers(0, n, B)
    rows = rng.normal(size=(B, d))
    eu, tk = rng.normal(size=(m, d)), rng.normal(size=(n, d))
    target = np.zeros((m, d))
    inst = 1400
    ps = rng.normal(size=inst)
    ns = rng.normal(size=(inst, 99))
    pi = rng.integers(0, n, inst)
    ni = rng.integers(0, n, (inst, 99))
    return {
        "scatter_add_rows": (lambda f: f(target, users, rows)),
        "gather_dot": (lambda f: f(eu, users, tk, concepts)),
        "rank_counts": (lambda f: f(ps, pi, ns, ni)),
    }, {
        "scatter_add_rows": (_kernels.scatter_add_rows_np, getattr(_kernels, "scatter_add_rows_nb", None)),
        "gather_dot": (_kernels.gather_dot_np, getattr(_kernels, "gather_dot_nb", None)),
        "rank_counts": (_kernels.rank_counts_np, getattr(_kernels, "rank_counts_nb", None)),
    }


EPOCH_SCRIPT = """
import tempfile, time
from hinrec import BACKEND
from hinrec.data import SyntheticSpec, generate_synthetic
from hinrec.experiment import ExperimentConfig, build_from_config, load_bundle
from hinrec.trainer import train
d = tempfile.mkdtemp()
generate_synthetic(SyntheticSpec(seed=0), d)
cfg = ExperimentConfig.load(overrides={"data.dir": d, "encoder.d": "32", "train.epochs": "1",
                                       "train.batch_size": "512"})
bundle = load_bundle(cfg)
model = build_from_config(cfg, bundle)
train(model, bundle.train, cfg.train_config())          # warm-up epoch
t0 = time.perf_counter()
train(model, bundle.train, cfg.train_config())
print(BACKEND, time.perf_counter() - t0)
"""


def epoch_times():
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, HINREC_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", EPOCH_SCRIPT], env=env, capture_output=True,
                             text=True, check=True)
        backend, secs = res.stdout.split()
        out[backend] = float(secs)
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--epoch", action="store_true", help="also time a full training epoch")
    parser.add_argument("--repeat", type=int, default=7)
    args = parser.parse_args()
    if not _kernels.HAS_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    calls, impls = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':<18}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, call in calls.items():
        np_fn, nb_fn = impls[name]
        t_np = best_of(lambda: call(np_fn), args.repeat)
        t_nb = best_of(lambda: call(nb_fn), args.repeat)
        print(f"{name:<18}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>8.1f}x")
    if args.epoch:
        t = epoch_times()
        print(f"\ntraining epoch (500 users, d=32): numpy {t['numpy']:.2f}s, numba {t['numba']:.2f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
