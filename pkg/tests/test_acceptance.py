"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints. The
benchmark experiments share identical (graph, config) runs through a cache,
which is safe because training is deterministic given the seed.
"""
import resource
import statistics
import subprocess
import sys
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import check_gradients
from rabot import experiments
from rabot.augment import knn_minority, synthesize
from rabot.backbones import BackboneConfig
from rabot.edgefilter import ControllerConfig, apply_mask, oracle_scores, similarity_from_scores, step_tau
from rabot.encoder import EncoderConfig
from rabot.synthgen import CAMOUFLAGE_500, generate
from rabot.trainer import RABot, TrainConfig
from test_augment import brute_knn
from test_trainer import tiny_graph, well_conditioned

RESULTS: list[str] = []
SEEDS = (1, 2, 3, 4, 5)


def record(number: int, ok: bool, detail: str) -> None:
    RESULTS.append(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def means(rows, key="method", **where):
    groups = {}
    for r in rows:
        if all(r[k] == v for k, v in where.items()):
            groups.setdefault(r[key], []).append(r["accuracy"])
    return {k: statistics.fmean(v) for k, v in groups.items()}


@pytest.fixture(scope="module")
def bench():
    g, _ = generate(CAMOUFLAGE_500)
    return g


@pytest.fixture(scope="module", autouse=True)
def shared_runs():
    cache = {}
    real = experiments.train

    def cached(g, cfg, trace=False):
        key = (id(g), cfg)
        if key not in cache:
            cache[key] = (g, real(g, cfg, trace))
        return cache[key][1]

    mp = pytest.MonkeyPatch()
    mp.setattr(experiments, "train", cached)
    mp.setenv("RABOT_THREADS", "1")  # keep runs in-process so the cache sees them
    yield
    mp.undo()


def test_c01_gradient_integrity():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        for kind in ("gcn", "attn", "relational"):
            rng = np.random.default_rng(seed)
            g = tiny_graph(rng)
            cfg = TrainConfig(
                encoder=EncoderConfig(latent_dim=4, heads=2),
                backbone=BackboneConfig(kind=kind),
                predictor_hidden=3,
                k=1,
            )
            model = RABot(g, cfg, rng)
            well_conditioned(model, g, rng)

            def build(tape, model=model, g=g):
                return model.forward(tape, g, 0.0, np.arange(5), np.random.default_rng(99)).loss

            worst = max(worst, check_gradients(build, model.parameters(), floor=1e-5))
        # classifier head on fused embeddings, for both attention scopes
        for scope in ("modality", "global"):
            rng = np.random.default_rng(seed)
            g = tiny_graph(rng)
            cfg = TrainConfig(encoder=EncoderConfig(latent_dim=4, heads=2, attention_scope=scope), enable_gnn=False, k=1)
            model = RABot(g, cfg, rng)

            def build(tape, model=model, g=g):
                return model.forward(tape, g, 0.0, np.arange(5), np.random.default_rng(99)).loss

            worst = max(worst, check_gradients(build, model.parameters(), floor=1e-5))
    elapsed = time.perf_counter() - start
    record(1, worst <= 1e-4 and elapsed < 30, f"max relative error {worst:.2e}, {elapsed:.1f}s")


def test_c02_oversampling_exactness():
    start = time.perf_counter()
    ok = True
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n_min = int(rng.integers(3, 12))
        n_maj = int(rng.integers(n_min + 1, 40))
        labels = np.array([1] * n_min + [0] * n_maj)
        rng.shuffle(labels)
        emb = rng.normal(size=(len(labels), int(rng.integers(1, 6))))
        k = int(rng.integers(1, n_min))
        batch = synthesize(emb, labels, k, rng)
        ok &= batch.class_counts[0] == batch.class_counts[1]
        for s in batch.synthetic:
            i, x = s.parents
            ok &= bool(np.allclose(s.embedding, (1 - s.delta) * emb[i] + s.delta * emb[x], rtol=0, atol=1e-15))
        for i in np.flatnonzero(labels == 1):
            ok &= knn_minority(emb, labels, i, k) == brute_knn(emb, labels, i, k, range(len(labels)))
    elapsed = time.perf_counter() - start
    record(2, bool(ok) and elapsed < 10, f"50 instances, {elapsed:.2f}s")


def test_c03_filter_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 2, size=30)
    pairs = np.array([[i, j] for i in range(30) for j in range(i + 1, 30)])
    edges = pairs[rng.choice(len(pairs), size=200, replace=False)]
    p = similarity_from_scores(oracle_scores(labels), edges)
    homogeneous = labels[edges[:, 0]] == labels[edges[:, 1]]
    ok = all(
        np.array_equal(apply_mask(edges, p, tau).keep, homogeneous) for tau in np.round(np.arange(0.1, 1.0, 0.1), 1)
    )
    elapsed = time.perf_counter() - start
    record(3, ok and elapsed < 5, f"200 edges, 9 thresholds, {elapsed:.3f}s")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.integers(0, 2**31))
def _monotone_property(p, seed):
    taus = np.sort(np.random.default_rng(seed).uniform(size=6))
    edges = np.zeros((len(p), 2), dtype=int)
    kept = [set(np.flatnonzero(apply_mask(edges, p, t).keep)) for t in taus]
    assert all(b <= a for a, b in zip(kept, kept[1:]))


def test_c04_monotone_and_clamped():
    _monotone_property()
    cfg = ControllerConfig()
    rng = np.random.default_rng(4)
    tau, lo, hi = cfg.tau0, 1.0, 0.0
    for a in rng.uniform(size=10_000):
        tau = step_tau(tau, float(a), cfg)
        lo, hi = min(lo, tau), max(hi, tau)
    record(4, cfg.tau_min <= lo and hi <= cfg.tau_max, f"tau range [{lo:.2f}, {hi:.2f}] over 10000 actions")


def test_c05_oracle_cleaning(bench):
    rows = experiments.oracle_clean(bench, TrainConfig(), seeds=SEEDS)
    parts, ok = [], True
    for kind in ("gcn", "relational"):
        m = means(rows, backbone=kind)
        ok &= m["cleaned"] > m["raw"]
        parts.append(f"{kind}: cleaned {m['cleaned']:.4f} vs raw {m['raw']:.4f}")
    record(5, ok, "; ".join(parts))


def test_c06_learned_vs_random_drop(bench):
    start = time.perf_counter()
    rows = experiments.random_drop(bench, TrainConfig(), rates=(0.1, 0.3, 0.5), seeds=SEEDS)
    elapsed = time.perf_counter() - start
    parts, ok = [], True
    for rate in (0.1, 0.3, 0.5):
        m = means(rows, drop_rate=rate)
        ok &= m["rabot"] - m["random"] > 0
        parts.append(f"{rate:.0%}: {m['rabot']:.4f} vs {m['random']:.4f}")
    record(6, ok and elapsed < 900, "; ".join(parts) + f"; {elapsed:.0f}s")


def test_c07_ablation_order(bench):
    m = means(experiments.ablate(bench, TrainConfig(), seeds=SEEDS))
    ok = m["full"] >= m["w/o FA"] and m["full"] >= m["w/o EF"] and m["full"] > m["w/o GC"]
    record(7, ok, ", ".join(f"{k} {v:.4f}" for k, v in m.items()))


def test_c08_dynamic_threshold(bench):
    m = means(experiments.threshold_sweep(bench, TrainConfig(), taus=(0.2, 0.4, 0.6, 0.8), seeds=SEEDS))
    best = max(v for k, v in m.items() if k.startswith("fixed"))
    record(8, m["dynamic"] >= best - 0.005, f"dynamic {m['dynamic']:.4f} vs best fixed {best:.4f}")


def _cli_train(out, seed=1):
    start = time.perf_counter()
    subprocess.run(
        [sys.executable, "-m", "rabot.cli", "train", "--out", str(out), "--seed", str(seed)],
        check=True,
        capture_output=True,
    )
    return time.perf_counter() - start


def test_c09_and_c10_cli_runs(tmp_path):
    times = [_cli_train(tmp_path / name) for name in ("a", "b")]
    same = (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    peak_mb = resource.getrusage(resource.RUSAGE_CHILDREN).ru_maxrss / 1024
    ok10 = max(times) <= 300 and peak_mb <= 1024
    RESULTS.append(f"criterion  9: {'PASS' if same else 'FAIL'}  report.json byte-identical across two runs")
    RESULTS.append(
        f"criterion 10: {'PASS' if ok10 else 'FAIL'}  slowest run {max(times):.1f}s, peak RSS {peak_mb:.0f} MB"
    )
    assert same and ok10
