import os
import subprocess
import sys

import numpy as np
import pytest

from rabot import _kernels

pytestmark = pytest.mark.skipif(_kernels.numba_impl is None, reason="numba unavailable")


def random_edges(rng, n, e):
    return rng.integers(0, n, size=e), rng.integers(0, n, size=e)


def test_spmm_loop_oracle(rng, kernel_impl):
    src, dst = random_edges(rng, 6, 20)
    w, h = rng.normal(size=20), rng.normal(size=(6, 3))
    expect = np.zeros((6, 3))
    for s, d, we in zip(src, dst, w):
        expect[d] += we * h[s]
    np.testing.assert_allclose(_kernels.spmm(src, dst, w, h, 6), expect, rtol=1e-13, atol=1e-14)


def test_edge_dot_loop_oracle(rng, kernel_impl):
    src, dst = random_edges(rng, 6, 15)
    a, b = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    expect = [float(a[d] @ b[s]) for s, d in zip(src, dst)]
    np.testing.assert_allclose(_kernels.edge_dot(src, dst, a, b), expect, rtol=1e-13)


def test_segment_reductions(kernel_impl):
    x = np.array([1.0, 5.0, -2.0, 3.0])
    seg = np.array([0, 2, 0, 2])
    np.testing.assert_array_equal(_kernels.segment_sum(x, seg, 4), [-1.0, 0.0, 8.0, 0.0])
    np.testing.assert_array_equal(_kernels.segment_max(x, seg, 4), [1.0, -np.inf, 5.0, -np.inf])


def test_knn_tie_break_by_id(kernel_impl):
    pts = np.array([[0.0], [1.0], [-1.0], [5.0]])
    out = _kernels.knn(pts, np.array([0]), np.array([10, 30, 20, 40]), 2)
    # rows 1 and 2 are equidistant; row 2 carries the smaller id
    assert out.tolist() == [[2, 1]]


@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    rng = np.random.default_rng(seed)
    src, dst = random_edges(rng, 30, 200)
    w, h = rng.normal(size=200), rng.normal(size=(30, 8))
    a = rng.normal(size=(30, 8))
    pts = rng.normal(size=(25, 3))
    ids = rng.permutation(100)[:25]
    npi, nbi = _kernels.numpy_impl, _kernels.numba_impl
    np.testing.assert_allclose(npi.spmm(src, dst, w, h, 30), nbi.spmm(src, dst, w, h, 30), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(npi.edge_dot(src, dst, a, h), nbi.edge_dot(src, dst, a, h), rtol=1e-12)
    np.testing.assert_allclose(npi.segment_sum(w, dst, 30), nbi.segment_sum(w, dst, 30), rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(npi.segment_max(w, dst, 30), nbi.segment_max(w, dst, 30))
    rows = np.arange(25)
    np.testing.assert_array_equal(npi.knn(pts, rows, ids, 4), nbi.knn(pts, rows, ids, 4))


def test_env_flag_selects_numpy_path():
    code = "from rabot import _kernels; print(_kernels.active.name)"
    env = dict(os.environ, RABOT_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["RABOT_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"
