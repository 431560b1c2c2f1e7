"""Latent-space minority oversampling by nearest-neighbour interpolation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class AugmentError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticNode:
    embedding: np.ndarray
    label: int
    parents: tuple[int, int]
    delta: float


@dataclass
class AugmentedBatch:
    """Training rows plus synthetic minority rows.

    ``train_nodes`` are node ids of the original training rows, in the order
    used by ``labels``; synthetic labels follow them.
    """

    train_nodes: np.ndarray
    embeddings: np.ndarray
    synthetic: list[SyntheticNode] = field(default_factory=list)
    minority: int = 1
    train_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([self.train_labels, np.full(len(self.synthetic), self.minority)])

    @property
    def parents(self) -> np.ndarray:
        return np.array([s.parents for s in self.synthetic], dtype=np.int64).reshape(-1, 2)

    @property
    def deltas(self) -> np.ndarray:
        return np.array([s.delta for s in self.synthetic], dtype=np.float64)

    @property
    def class_counts(self) -> dict[int, int]:
        y = self.labels
        return {c: int((y == c).sum()) for c in (0, 1)}


def _minority_class(labels, train_nodes) -> tuple[int, np.ndarray, np.ndarray]:
    y = labels[train_nodes]
    counts = [(y == c).sum() for c in (0, 1)]
    if min(counts) == 0:
        raise AugmentError("training split holds a single class; nothing to balance against")
    minority = int(np.argmin(counts)) if counts[0] != counts[1] else 1
    return minority, train_nodes[y == minority], train_nodes[y != minority]


def knn_minority(embeddings, labels, i: int, k: int, train_nodes=None) -> list[int]:
    """The k training minority nodes nearest to node ``i`` (excluding ``i``).

    Distance is Euclidean; ties go to the lower node id.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if train_nodes is None:
        train_nodes = np.arange(len(labels))
    train_nodes = np.asarray(train_nodes, dtype=np.int64)
    cls = labels[i]
    cands = np.sort(train_nodes[labels[train_nodes] == cls])
    if i not in cands:
        raise AugmentError(f"node {i} is not a training node of its class")
    if len(cands) - 1 < k:
        raise AugmentError(f"only {len(cands) - 1} candidate neighbours for k={k}; use a smaller k")
    row = int(np.searchsorted(cands, i))
    idx = _kernels.knn(embeddings[cands], np.array([row]), cands, k)[0]
    return [int(cands[j]) for j in idx]


def _all_knn(embeddings, cands: np.ndarray, k: int) -> np.ndarray:
    rows = np.arange(len(cands))
    return cands[_kernels.knn(embeddings[cands], rows, cands, k)]


def synthesize(
    embeddings,
    labels,
    k: int,
    rng: np.random.Generator,
    train_nodes=None,
    delta_override: float | None = None,
) -> AugmentedBatch:
    """Generate minority embeddings until the training classes are balanced.

    Parents are visited round-robin over training minority nodes in id order;
    each picks a uniform neighbour from its k-NN set and ``delta ~ U(0, 1)``.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if train_nodes is None:
        train_nodes = np.flatnonzero(labels >= 0)
    train_nodes = np.asarray(train_nodes, dtype=np.int64)
    minority, mino, majo = _minority_class(labels, train_nodes)
    batch = AugmentedBatch(
        train_nodes=train_nodes,
        embeddings=embeddings[train_nodes],
        minority=minority,
        train_labels=labels[train_nodes].astype(np.int64),
    )
    need = len(majo) - len(mino)
    if need <= 0:
        return batch
    if len(mino) < 2:
        raise AugmentError(f"need at least 2 minority training nodes, found {len(mino)}")
    if len(mino) < k + 1:
        raise AugmentError(f"need at least k+1={k + 1} minority training nodes, found {len(mino)}")
    mino = np.sort(mino)
    neigh = _all_knn(embeddings, mino, k)
    picks = rng.integers(0, k, size=need)
    deltas = rng.uniform(0.0, 1.0, size=need) if delta_override is None else np.full(need, delta_override)
    for s in range(need):
        r = s % len(mino)
        i, x = int(mino[r]), int(neigh[r, picks[s]])
        d = float(deltas[s])
        emb = (1.0 - d) * embeddings[i] + d * embeddings[x]
        batch.synthetic.append(SyntheticNode(emb, minority, (i, x), d))
    return batch
