"""Hot edge-level kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``RABOT_DISABLE_NUMBA`` is unset or ``0``. Both implementations are
always importable as ``numpy_impl`` / ``numba_impl`` so tests and benchmarks
can compare them directly.
"""
from __future__ import annotations

import math
import os
import types

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


def _flag_disabled() -> bool:
    return os.environ.get("RABOT_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


# --------------------------------------------------------------------------
# numpy reference path


def _spmm_np(src, dst, w, h, n):
    out = np.zeros((n, h.shape[1]))
    np.add.at(out, dst, w[:, None] * h[src])
    return out


def _edge_dot_np(src, dst, a, b):
    return np.einsum("ij,ij->i", a[dst], b[src])


def _segment_sum_np(x, seg, n):
    return np.bincount(seg, weights=x, minlength=n).astype(np.float64)


def _segment_max_np(x, seg, n):
    out = np.full(n, -np.inf)
    np.maximum.at(out, seg, x)
    return out


def _knn_np(points, query_rows, ids, k):
    # points: (m, d) candidate embeddings, query_rows: indices into points
    out = np.empty((len(query_rows), k), dtype=np.int64)
    for qi, r in enumerate(query_rows):
        diff = points - points[r]
        dist = np.sqrt((diff * diff).sum(axis=1))
        order = np.lexsort((ids, dist))
        order = order[order != r]
        out[qi] = order[:k]
    return out


numpy_impl = types.SimpleNamespace(
    name="numpy",
    spmm=_spmm_np,
    edge_dot=_edge_dot_np,
    segment_sum=_segment_sum_np,
    segment_max=_segment_max_np,
    knn=_knn_np,
)


# --------------------------------------------------------------------------
# numba path

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _spmm_nb(src, dst, w, h, n):
        d = h.shape[1]
        out = np.zeros((n, d))
        for e in range(src.shape[0]):
            s = src[e]
            t = dst[e]
            we = w[e]
            for k in range(d):
                out[t, k] += we * h[s, k]
        return out

    @numba.njit(cache=True)
    def _edge_dot_nb(src, dst, a, b):
        d = a.shape[1]
        out = np.empty(src.shape[0])
        for e in range(src.shape[0]):
            s = src[e]
            t = dst[e]
            acc = 0.0
            for k in range(d):
                acc += a[t, k] * b[s, k]
            out[e] = acc
        return out

    @numba.njit(cache=True)
    def _segment_sum_nb(x, seg, n):
        out = np.zeros(n)
        for e in range(x.shape[0]):
            out[seg[e]] += x[e]
        return out

    @numba.njit(cache=True)
    def _segment_max_nb(x, seg, n):
        out = np.full(n, -np.inf)
        for e in range(x.shape[0]):
            if x[e] > out[seg[e]]:
                out[seg[e]] = x[e]
        return out

    @numba.njit(cache=True)
    def _knn_nb(points, query_rows, ids, k):
        m, d = points.shape
        out = np.empty((query_rows.shape[0], k), dtype=np.int64)
        best_d = np.empty(k)
        best_i = np.empty(k, dtype=np.int64)
        for qi in range(query_rows.shape[0]):
            r = query_rows[qi]
            filled = 0
            for j in range(m):
                if j == r:
                    continue
                acc = 0.0
                for c in range(d):
                    diff = points[j, c] - points[r, c]
                    acc += diff * diff
                dist = math.sqrt(acc)
                # insertion into a sorted buffer keyed by (dist, id)
                pos = filled
                while pos > 0 and (
                    best_d[pos - 1] > dist or (best_d[pos - 1] == dist and ids[best_i[pos - 1]] > ids[j])
                ):
                    pos -= 1
                if pos >= k:
                    continue
                last = filled if filled < k else k - 1
                for q in range(last, pos, -1):
                    best_d[q] = best_d[q - 1]
                    best_i[q] = best_i[q - 1]
                best_d[pos] = dist
                best_i[pos] = j
                if filled < k:
                    filled += 1
            for q in range(k):
                out[qi, q] = best_i[q]
        return out

    numba_impl = types.SimpleNamespace(
        name="numba",
        spmm=_spmm_nb,
        edge_dot=_edge_dot_nb,
        segment_sum=_segment_sum_nb,
        segment_max=_segment_max_nb,
        knn=_knn_nb,
    )
else:  # pragma: no cover
    numba_impl = None


USE_NUMBA = HAS_NUMBA and not _flag_disabled()
active = numba_impl if USE_NUMBA else numpy_impl


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def spmm(src, dst, w, h, n):
    """``out[dst[e]] += w[e] * h[src[e]]`` for every edge ``e``; returns (n, d)."""
    return active.spmm(_i64(src), _i64(dst), _f64(w), _f64(h), int(n))


def edge_dot(src, dst, a, b):
    """Per-edge ``a[dst[e]] . b[src[e]]``."""
    return active.edge_dot(_i64(src), _i64(dst), _f64(a), _f64(b))


def segment_sum(x, seg, n):
    return active.segment_sum(_f64(x), _i64(seg), int(n))


def segment_max(x, seg, n):
    return active.segment_max(_f64(x), _i64(seg), int(n))


def knn(points, query_rows, ids, k):
    """k nearest rows of ``points`` for each query row, excluding the row itself.

    Ordering is by Euclidean distance, ties broken by ascending ``ids``.
    Returned values are row positions into ``points``.
    """
    return active.knn(_f64(points), _i64(query_rows), _i64(ids), int(k))
