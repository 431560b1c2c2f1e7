"""Time the numba kernels against the numpy fallback on benchmark-sized inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--scale S]

Besides per-kernel timings it times one full training epoch under each
backend by re-importing the package in a subprocess with the env flag set.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from rabot import _kernels

EPOCH_SNIPPET = """
import time
from rabot.synthgen import CAMOUFLAGE_500, generate
from rabot.trainer import TrainConfig, train
g, _ = generate(CAMOUFLAGE_500)
train(g, TrainConfig(epochs=2))  # warm-up, includes jit compilation
t = time.perf_counter()
train(g, TrainConfig(epochs=10))
print((time.perf_counter() - t) / 10)
"""


def inputs(scale: int, rng):
    n = 500 * scale
    e = 4000 * scale
    d = 128
    src = rng.integers(0, n, e)
    dst = rng.integers(0, n, e)
    w = rng.random(e)
    h = rng.normal(size=(n, d))
    pts = rng.normal(size=(75 * scale, d))
    return {
        "spmm": (src, dst, w, h, n),
        "edge_dot": (src, dst, h, h),
        "segment_sum": (w, dst, n),
        "segment_max": (w, dst, n),
        "knn": (pts, np.arange(len(pts)), np.arange(len(pts)), 5),
    }


def per_epoch(disable: bool) -> float:
    env = dict(os.environ, RABOT_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--scale", type=int, default=1, help="multiply node and edge counts")
    ap.add_argument("--skip-epoch", action="store_true", help="only time the kernels")
    args = ap.parse_args()
    if _kernels.numba_impl is None:
        sys.exit("numba is not importable; nothing to compare")

    data = inputs(args.scale, np.random.default_rng(0))
    print(f"{'kernel':12s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, a in data.items():
        np_fn, nb_fn = getattr(_kernels.numpy_impl, name), getattr(_kernels.numba_impl, name)
        np.testing.assert_allclose(nb_fn(*a), np_fn(*a), rtol=1e-10, atol=1e-12)  # also triggers compilation
        t_np = min(timeit.repeat(lambda: np_fn(*a), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: nb_fn(*a), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:12s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:7.1f}x")

    if not args.skip_epoch:
        t_np, t_nb = per_epoch(True), per_epoch(False)
        print(f"{'train epoch':12s} {t_np * 1e3:10.1f} {t_nb * 1e3:10.1f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
