"""Labeled two-class social graphs with planted camouflage edges and features."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import MODALITIES, Graph, SplitSpec, assign_splits, save_dataset


class GenSpecError(ValueError):
    pass


def _default_dims() -> dict[str, int]:
    return {"numerical": 6, "boolean": 4, "description": 16, "tweet": 16}


@dataclass(frozen=True)
class GenSpec:
    n: int = 500
    bot_fraction: float = 0.15
    relations: int = 2
    intra_edge_prob: float = 0.0125
    cross_edge_prob: float = 0.0157
    bot_intra_edge_prob: float | None = 0.135  # None: same as intra_edge_prob
    feature_dims: dict = field(default_factory=_default_dims)
    class_mean_separation: float = 1.5
    camouflage_feature_fraction: float = 0.3
    mean_tweets: float = 3.0
    split: tuple[float, float, float] = (0.7, 0.2, 0.1)
    seed: int = 0

    def __post_init__(self):
        if self.n < 10:
            raise GenSpecError(f"n must be >= 10, got {self.n}")
        if not 0.0 < self.bot_fraction <= 0.5:
            raise GenSpecError(f"bot_fraction must lie in (0, 0.5], got {self.bot_fraction}")
        if self.num_bots < 2:
            raise GenSpecError(f"spec yields {self.num_bots} bots; need at least 2")
        if self.relations < 1:
            raise GenSpecError("need at least one relation")
        probs = {
            "intra_edge_prob": self.intra_edge_prob,
            "cross_edge_prob": self.cross_edge_prob,
            "camouflage_feature_fraction": self.camouflage_feature_fraction,
        }
        if self.bot_intra_edge_prob is not None:
            probs["bot_intra_edge_prob"] = self.bot_intra_edge_prob
        for name, v in probs.items():
            if not 0.0 <= v <= 1.0:
                raise GenSpecError(f"{name} must lie in [0, 1], got {v}")
        if self.class_mean_separation < 0:
            raise GenSpecError("class_mean_separation must be >= 0")
        if set(self.feature_dims) != set(MODALITIES) or min(self.feature_dims.values()) < 1:
            raise GenSpecError(f"feature_dims needs positive sizes for {MODALITIES}")

    @property
    def num_bots(self) -> int:
        return int(round(self.bot_fraction * self.n))

    @property
    def p_bot_bot(self) -> float:
        return self.intra_edge_prob if self.bot_intra_edge_prob is None else self.bot_intra_edge_prob

    def replace(self, **changes) -> "GenSpec":
        return dataclasses.replace(self, **changes)


CAMOUFLAGE_500 = GenSpec()


def relation_names(count: int) -> tuple[str, ...]:
    base = ("follower", "friend")
    return tuple(base[i] if i < len(base) else f"rel{i}" for i in range(count))


def _sample_edges(labels: np.ndarray, spec: GenSpec, rng: np.random.Generator) -> np.ndarray:
    n = len(labels)
    rows = []
    for i in range(n - 1):
        j = np.arange(i + 1, n)
        same = labels[j] == labels[i]
        p = np.where(same, spec.p_bot_bot if labels[i] == 1 else spec.intra_edge_prob, spec.cross_edge_prob)
        hit = j[rng.random(len(j)) < p]
        if len(hit):
            rows.append(np.column_stack([np.full(len(hit), i), hit]))
    return np.concatenate(rows).astype(np.int64) if rows else np.zeros((0, 2), dtype=np.int64)


def generate(spec: GenSpec) -> tuple[Graph, list[np.ndarray]]:
    """Sample a graph; returns it with per-relation cross-class flags per edge."""
    rng = np.random.default_rng(spec.seed)
    n, nb = spec.n, spec.num_bots
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.choice(n, size=nb, replace=False)] = 1
    bots = np.flatnonzero(labels == 1)
    camo = np.zeros(n, dtype=bool)
    camo[rng.choice(bots, size=int(round(spec.camouflage_feature_fraction * nb)), replace=False)] = True
    looks_bot = (labels == 1) & ~camo

    dims = spec.feature_dims
    total = sum(dims.values())
    direction = rng.normal(size=total)
    direction *= spec.class_mean_separation / np.linalg.norm(direction)
    latent = rng.normal(size=(n, total)) + np.outer(looks_bot, direction)
    blocks = {}
    start = 0
    for m in MODALITIES:
        blocks[m] = latent[:, start : start + dims[m]]
        start += dims[m]
    boolean = (blocks["boolean"] > 0).astype(np.float64)

    # tweets: several noisy draws around the node's tweet vector, mean-pooled
    counts = rng.poisson(spec.mean_tweets, size=n)
    tweet = np.zeros((n, dims["tweet"]))
    for i in range(n):
        if counts[i]:
            draws = blocks["tweet"][i] + 0.5 * rng.normal(size=(counts[i], dims["tweet"]))
            tweet[i] = draws.mean(axis=0)

    names = relation_names(spec.relations)
    relations = [_sample_edges(labels, spec, rng) for _ in names]
    g = Graph(
        n=n,
        relation_names=names,
        relations=tuple(relations),
        numerical=blocks["numerical"],
        boolean=boolean,
        description=blocks["description"],
        tweet=tweet,
        labels=labels,
    )
    tr, va, te = spec.split
    g = assign_splits(g, SplitSpec(tr, va, te, seed=spec.seed))
    cross = [labels[e[:, 0]] != labels[e[:, 1]] for e in g.relations]
    return g, cross


def write_dataset(spec: GenSpec, out_dir) -> Path:
    """Generate and save a dataset directory plus ``edge_truth.tsv``."""
    g, cross = generate(spec)
    root = save_dataset(g, out_dir)
    with open(root / "edge_truth.tsv", "w") as fh:
        for name, edges, flags in zip(g.relation_names, g.relations, cross):
            for (i, j), c in zip(edges, flags):
                fh.write(f"{name}\t{i}\t{j}\t{'cross' if c else 'intra'}\n")
    return root


def expected_cross_fraction(spec: GenSpec) -> tuple[float, float]:
    """Expected cross-class share of edges and the expected edge count per relation."""
    nb = spec.num_bots
    nh = spec.n - nb
    e_cross = spec.cross_edge_prob * nb * nh
    e_total = e_cross + spec.intra_edge_prob * nh * (nh - 1) / 2 + spec.p_bot_bot * nb * (nb - 1) / 2
    return (e_cross / e_total if e_total else 0.0), e_total
