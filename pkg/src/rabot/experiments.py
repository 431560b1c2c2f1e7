"""Multi-seed experiment drivers: ablation, threshold sweep, edge-noise studies."""
from __future__ import annotations

import os
import statistics
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .graph import Graph, remove_cross_class_edges
from .trainer import RunReport, TrainConfig, train

DEFAULT_SEEDS = (1, 2, 3, 4, 5)
DROP_RATES = (0.1, 0.3, 0.5)
SWEEP_TAUS = (0.2, 0.4, 0.6, 0.8)
LABEL_FRACTIONS = tuple(round(0.1 * i, 1) for i in range(1, 11))


def worker_count() -> int:
    env = os.environ.get("RABOT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_one(job) -> tuple[str, int, dict, RunReport]:
    method, g, cfg, extra = job
    report = train(g, cfg)
    report.checkpoint = None  # keeps results picklable and small
    return method, cfg.seed, extra, report


def run_jobs(jobs) -> list[tuple[str, int, dict, RunReport]]:
    """Run ``(method, graph, cfg, extra)`` jobs, serially or across processes.

    Results come back sorted by (method, seed) whatever the execution order.
    """
    workers = min(worker_count(), len(jobs))
    if workers <= 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    return sorted(results, key=lambda r: (r[0], r[1], sorted(r[2].items())))


def _row(method, seed, extra, report: RunReport) -> dict:
    return {
        "method": method,
        **extra,
        "seed": seed,
        "accuracy": report.test_accuracy,
        "f1": report.test_f1,
        "best_epoch": report.best_epoch,
        "realized_drop_rate": report.realized_drop_rate,
        "final_tau": report.final_tau,
    }


def summarize(rows: list[dict], by=("method",)) -> list[dict]:
    """Mean and population std of accuracy/F1 per group."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in by), []).append(r)
    out = []
    for key, rs in groups.items():
        accs = [r["accuracy"] for r in rs]
        f1s = [r["f1"] for r in rs]
        out.append(
            {
                **dict(zip(by, key)),
                "n": len(rs),
                "acc_mean": statistics.fmean(accs),
                "acc_std": statistics.pstdev(accs),
                "f1_mean": statistics.fmean(f1s),
                "f1_std": statistics.pstdev(f1s),
                "seeds": [r["seed"] for r in rs],
            }
        )
    return out


def ablation_variants(cfg: TrainConfig) -> dict[str, TrainConfig]:
    return {
        "full": cfg,
        "w/o MA": cfg.replace(enable_attention=False),
        "w/o FA": cfg.replace(enable_augment=False),
        "w/o EF": cfg.replace(enable_filter=False, lambda_e=0.0),
        "w/o GC": cfg.replace(enable_gnn=False),
    }


def ablate(g: Graph, cfg: TrainConfig, seeds=DEFAULT_SEEDS) -> list[dict]:
    jobs = [(name, g, v.replace(seed=s), {}) for name, v in ablation_variants(cfg).items() for s in seeds]
    return [_row(*r) for r in run_jobs(jobs)]


def threshold_sweep(g: Graph, cfg: TrainConfig, taus=SWEEP_TAUS, seeds=DEFAULT_SEEDS) -> list[dict]:
    jobs = []
    for tau in taus:
        fixed = cfg.replace(
            dynamic_tau=False, controller=_with_tau0(cfg, tau), enable_filter=True, drop_rate=None
        )
        jobs += [(f"fixed-{tau:.1f}", g, fixed.replace(seed=s), {"tau": tau}) for s in seeds]
    dyn = cfg.replace(dynamic_tau=True, enable_filter=True, drop_rate=None)
    jobs += [("dynamic", g, dyn.replace(seed=s), {"tau": "dynamic"}) for s in seeds]
    return [_row(*r) for r in run_jobs(jobs)]


def _with_tau0(cfg: TrainConfig, tau: float):
    import dataclasses

    return dataclasses.replace(cfg.controller, tau0=tau)


def random_edge_removal(g: Graph, rate: float, seed: int) -> Graph:
    """Delete ``round(rate * E_r)`` uniformly chosen edges from every relation."""
    rng = np.random.default_rng([seed, 7])
    kept = []
    for edges in g.relations:
        n_drop = int(round(rate * len(edges)))
        keep = np.ones(len(edges), dtype=bool)
        keep[rng.choice(len(edges), size=n_drop, replace=False)] = False
        kept.append(edges[keep])
    return g.with_edges(kept)


def random_drop(g: Graph, cfg: TrainConfig, rates=DROP_RATES, seeds=DEFAULT_SEEDS) -> list[dict]:
    """Learned filtering at a fixed drop fraction vs. matched random deletion."""
    learned = [
        ("rabot", g, cfg.replace(seed=s, enable_filter=True, drop_rate=rate), {"drop_rate": rate})
        for rate in rates
        for s in seeds
    ]
    learned_res = run_jobs(learned)
    jobs = []
    for _, seed, extra, rep in learned_res:
        matched = rep.realized_drop_rate
        gr = random_edge_removal(g, matched, seed)
        jobs.append(
            ("random", gr, cfg.replace(seed=seed, enable_filter=False, drop_rate=None), dict(extra))
        )
    rows = [_row(*r) for r in learned_res]
    for method, seed, extra, rep in run_jobs(jobs):
        row = _row(method, seed, extra, rep)
        # the random graph's realized rate is the one it was matched to
        row["realized_drop_rate"] = next(
            r["realized_drop_rate"] for r in rows if r["seed"] == seed and r["drop_rate"] == extra["drop_rate"]
        )
        rows.append(row)
    return rows


def oracle_clean(g: Graph, cfg: TrainConfig, seeds=DEFAULT_SEEDS, backbones=("gcn", "relational")) -> list[dict]:
    """Raw graph vs. graph with every cross-class edge removed, no learned filter."""
    import dataclasses

    clean = remove_cross_class_edges(g)
    jobs = []
    for kind in backbones:
        base = cfg.replace(
            enable_filter=False, lambda_e=0.0, backbone=dataclasses.replace(cfg.backbone, kind=kind)
        )
        for s in seeds:
            jobs.append(("raw", g, base.replace(seed=s), {"backbone": kind}))
            jobs.append(("cleaned", clean, base.replace(seed=s), {"backbone": kind}))
    return [_row(*r) for r in run_jobs(jobs)]


def label_fraction(g: Graph, cfg: TrainConfig, fractions=LABEL_FRACTIONS, seeds=DEFAULT_SEEDS) -> list[dict]:
    jobs = [
        ("rabot", g, cfg.replace(seed=s, train_fraction=f), {"train_fraction": f}) for f in fractions for s in seeds
    ]
    return [_row(*r) for r in run_jobs(jobs)]


GROUPING = {
    "random-drop": ("drop_rate", "method"),
    "oracle-clean": ("backbone", "method"),
    "ablation": ("method",),
    "tau-sweep": ("method",),
    "label-fraction": ("train_fraction",),
}

EXPERIMENTS = {
    "random-drop": random_drop,
    "oracle-clean": oracle_clean,
    "ablation": ablate,
    "tau-sweep": threshold_sweep,
    "label-fraction": label_fraction,
}
