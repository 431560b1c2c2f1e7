"""Relation-aware message passing backbones, softmax head, node BCE, metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .numerics import ContractError, DimensionError, Tape, Tensor, glorot, parameter

log = logging.getLogger(__name__)

KINDS = ("gcn", "attn", "relational")
ATTN_SLOPE = 0.2
CLIP = 1e-12


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "relational"
    layers: int = 2
    hidden: int | None = None  # defaults to the input width
    slope: float = 0.01

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown backbone kind {self.kind!r}; expected one of {KINDS}")
        if self.layers < 1:
            raise ValueError("backbone needs at least one layer")


@dataclass
class Prediction:
    probs: np.ndarray  # (n, 2)

    @property
    def bot_prob(self) -> np.ndarray:
        return self.probs[:, 1]

    @property
    def hard(self) -> np.ndarray:
        return (self.probs[:, 1] >= 0.5).astype(np.int64)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    f1: float


def directed_with_self(edges: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Both directions of each undirected edge, then a self loop for every node."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    loops = np.arange(n, dtype=np.int64)
    src = np.concatenate([edges[:, 0], edges[:, 1], loops])
    dst = np.concatenate([edges[:, 1], edges[:, 0], loops])
    return src, dst


class Backbone:
    def __init__(self, in_dim: int, num_relations: int, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.num_relations = num_relations
        hid = cfg.hidden or in_dim
        self.dims = [in_dim] + [hid] * cfg.layers
        self.weights: list[list[tuple[Tensor, Tensor]]] = []
        self.att: list[tuple[Tensor, Tensor]] = []
        for l in range(cfg.layers):
            d_in, d_out = self.dims[l], self.dims[l + 1]
            per_rel = num_relations if cfg.kind == "relational" else 1
            self.weights.append(
                [
                    (glorot(rng, d_in, d_out, f"gnn{l}.W{r}"), parameter(np.zeros(d_out), f"gnn{l}.b{r}"))
                    for r in range(per_rel)
                ]
            )
            if cfg.kind == "attn":
                self.att.append((glorot(rng, d_out, 1, f"gnn{l}.a_src"), glorot(rng, d_out, 1, f"gnn{l}.a_dst")))
        self.head = Head(self.dims[-1], rng)

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def parameters(self) -> list[Tensor]:
        ps = [t for layer in self.weights for pair in layer for t in pair]
        ps += [t for pair in self.att for t in pair]
        return ps + self.head.parameters()

    def layer(self, tape: Tape, l: int, h: Tensor, kept: list[np.ndarray]) -> Tensor:
        """One propagation step; ``kept`` holds the surviving edges per relation."""
        if len(kept) != self.num_relations:
            raise DimensionError(f"got masks for {len(kept)} relations, graph has {self.num_relations}")
        n = h.shape[0]
        kind = self.cfg.kind
        outs = []
        shared = None
        if kind != "relational":
            W, b = self.weights[l][0]
            shared = tape.matmul(h, W)
        for r, edges in enumerate(kept):
            src, dst = directed_with_self(edges, n)
            if kind == "relational":
                W, b = self.weights[l][r]
                hw = tape.matmul(h, W)
            else:
                hw = shared
            if kind == "attn":
                a_src, a_dst = self.att[l]
                s_src = tape.gather_rows(tape.matmul(hw, a_src), src)
                s_dst = tape.gather_rows(tape.matmul(hw, a_dst), dst)
                e = tape.leaky_relu(tape.reshape(tape.add(s_src, s_dst), (len(src),)), ATTN_SLOPE)
                w = tape.segment_softmax(e, dst, n)
            else:
                deg = np.bincount(dst, minlength=n).astype(np.float64)
                w = 1.0 / deg[dst]
            agg = tape.edge_spmm(hw, src, dst, w, n)
            outs.append(tape.add(agg, b) if kind == "relational" else agg)
        z = outs[0]
        for o in outs[1:]:
            z = tape.add(z, o)
        if len(outs) > 1:
            z = tape.scale(z, 1.0 / len(outs))
        if kind != "relational":
            z = tape.add(z, b)
        return tape.leaky_relu(z, self.cfg.slope)

    def forward(self, tape: Tape, h0: Tensor, masks) -> tuple[list[Tensor], Tensor]:
        """Propagate through all layers with precomputed masks.

        ``masks[l][r]`` is either an EdgeMask or a kept-edge array. Returns the
        per-layer features (input first) and the (n, 2) class probabilities.
        """
        if len(masks) != self.cfg.layers:
            raise DimensionError(f"got masks for {len(masks)} layers, backbone has {self.cfg.layers}")
        hs = [h0]
        for l, layer_masks in enumerate(masks):
            kept = [m.kept_edges if hasattr(m, "kept_edges") else m for m in layer_masks]
            hs.append(self.layer(tape, l, hs[-1], kept))
        return hs, self.head(tape, hs[-1])


class Head:
    """Linear layer followed by a row softmax over {human, bot}."""

    def __init__(self, in_dim: int, rng: np.random.Generator):
        self.W = glorot(rng, in_dim, 2, "head.W")
        self.b = parameter(np.zeros(2), "head.b")

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]

    def __call__(self, tape: Tape, h: Tensor) -> Tensor:
        return tape.softmax_rows(tape.add(tape.matmul(h, self.W), self.b))


_BOT_COLUMN = np.array([[0.0], [1.0]])


def node_loss(tape: Tape, probs: Tensor, labels, nodes) -> Tensor:
    """Mean binary cross-entropy of the bot probability over ``nodes``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ContractError("node_loss over an empty node set")
    y = np.asarray(labels)[nodes].astype(np.float64).reshape(-1, 1)
    if (y < 0).any():
        raise ContractError("node_loss over unlabeled nodes")
    p = tape.clip(tape.gather_rows(tape.matmul(probs, Tensor(_BOT_COLUMN)), nodes), CLIP, 1.0 - CLIP)
    q = tape.add(tape.mul(p, Tensor(2.0 * y - 1.0)), Tensor(1.0 - y))  # p if y == 1 else 1 - p
    return tape.scale(tape.mean(tape.log(q)), -1.0)


def evaluate(pred, labels, nodes, warn: bool = True) -> Metrics:
    """Accuracy and bot-positive F1 over ``nodes``."""
    probs = pred.probs if isinstance(pred, Prediction) else np.asarray(pred)
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ContractError("evaluate over an empty split")
    y = np.asarray(labels)[nodes]
    yhat = (probs[nodes, 1] >= 0.5).astype(np.int64)
    acc = float((yhat == y).mean())
    tp = int(((yhat == 1) & (y == 1)).sum())
    fp = int(((yhat == 1) & (y == 0)).sum())
    fn = int(((yhat == 0) & (y == 1)).sum())
    if tp == 0:
        if warn:
            log.warning("F1 undefined or zero (tp=0, fp=%d, fn=%d); reporting 0", fp, fn)
        return Metrics(acc, 0.0)
    precision, recall = tp / (tp + fp), tp / (tp + fn)
    return Metrics(acc, 2 * precision * recall / (precision + recall))
