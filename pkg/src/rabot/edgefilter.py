"""Edge reliability scoring, hard masking, and the RL threshold controller."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .graph import EdgeRangeError
from .numerics import (
    ContractError,
    OptimizerState,
    Tape,
    Tensor,
    backward,
    glorot,
    optimizer_step,
    parameter,
)

log = logging.getLogger(__name__)

EPS = 1e-12


class SimilarityPredictor:
    """Two-layer perceptron with a scalar sigmoid output, one per GNN layer."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator, name: str = "pred"):
        self.W1 = glorot(rng, in_dim, hidden, f"{name}.W1")
        self.b1 = parameter(np.zeros(hidden), f"{name}.b1")
        self.W2 = glorot(rng, hidden, 1, f"{name}.W2")
        self.b2 = parameter(np.zeros(1), f"{name}.b2")

    def parameters(self) -> list[Tensor]:
        return [self.W1, self.b1, self.W2, self.b2]

    def node_scores(self, tape: Tape, h: Tensor) -> Tensor:
        z = tape.leaky_relu(tape.add(tape.matmul(h, self.W1), self.b1))
        return tape.sigmoid(tape.add(tape.matmul(z, self.W2), self.b2))  # (n, 1)


def pair_similarity(tape: Tape, node_scores: Tensor, edges: np.ndarray) -> Tensor:
    """``p = 1 - |s_i - s_j|`` for each edge, from per-node sigmoid scores."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    n = node_scores.shape[0]
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise EdgeRangeError(f"edge endpoint outside [0, {n})")
    si = tape.gather_rows(node_scores, edges[:, 0])
    sj = tape.gather_rows(node_scores, edges[:, 1])
    d = tape.abs(tape.sub(si, sj))
    return tape.reshape(tape.sub(Tensor(np.ones((len(edges), 1))), d), (len(edges),))


def edge_similarity(tape: Tape, h: Tensor, edges, pred: SimilarityPredictor) -> Tensor:
    return pair_similarity(tape, pred.node_scores(tape, h), edges)


@dataclass
class EdgeMask:
    """Keep/drop decisions for one relation at one layer."""

    edges: np.ndarray
    scores: np.ndarray
    keep: np.ndarray
    tau: float
    relation: int = 0
    layer: int = 0

    @property
    def kept_edges(self) -> np.ndarray:
        return self.edges[self.keep]

    @property
    def num_dropped(self) -> int:
        return int((~self.keep).sum())


def apply_mask(edges, p, tau: float, relation: int = 0, layer: int = 0) -> EdgeMask:
    """Keep exactly the edges with ``p >= tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ContractError(f"threshold {tau} outside [0, 1]")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    p = np.asarray(p.value if isinstance(p, Tensor) else p, dtype=np.float64)
    return EdgeMask(edges, p, p >= tau, float(tau), relation, layer)


def mask_by_rate(edges, p, rate: float, relation: int = 0, layer: int = 0) -> EdgeMask:
    """Drop the ``round(rate * E)`` lowest-scoring edges (stable on ties)."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    p = np.asarray(p.value if isinstance(p, Tensor) else p, dtype=np.float64)
    n_drop = int(round(rate * len(p)))
    keep = np.ones(len(p), dtype=bool)
    keep[np.argsort(p, kind="stable")[:n_drop]] = False
    tau = float(p[keep].min()) if keep.any() else 1.0
    return EdgeMask(edges, p, keep, tau, relation, layer)


def all_ones_mask(edges, relation: int = 0, layer: int = 0) -> EdgeMask:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return EdgeMask(edges, np.ones(len(edges)), np.ones(len(edges), dtype=bool), 0.0, relation, layer)


def edge_loss(tape: Tape, p_list, edges_list, labels, train_mask, warn: bool = True) -> Tensor:
    """Mean edge BCE over edges whose endpoints are both labeled training nodes.

    Homogeneous edges contribute ``-log p``, heterogeneous ``-log(1 - p)``;
    contributions from all relations are pooled before averaging.
    """
    labels = np.asarray(labels)
    train_mask = np.asarray(train_mask, dtype=bool)
    terms = []
    for p, edges in zip(p_list, edges_list):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        i, j = edges[:, 0], edges[:, 1]
        ok = train_mask[i] & train_mask[j] & (labels[i] >= 0) & (labels[j] >= 0)
        idx = np.flatnonzero(ok)
        if not len(idx):
            continue
        same = (labels[i[idx]] == labels[j[idx]]).astype(np.float64)
        ps = tape.gather_rows(p, idx) if len(idx) != len(edges) else p
        # target prob is p for homogeneous edges and 1 - p for heterogeneous ones
        q = tape.add(tape.mul(ps, Tensor(2.0 * same - 1.0)), Tensor(1.0 - same))
        terms.append(tape.log(tape.clip(q, EPS, 1.0)))
    if not terms:
        if warn:
            log.warning("edge loss has no contributing train-train edges; returning 0")
        return Tensor(0.0)
    allq = terms[0] if len(terms) == 1 else tape.concat(terms, axis=0)
    return tape.scale(tape.mean(allq), -1.0)


# ----------------------------------------------------------------------------
# threshold controller


@dataclass(frozen=True)
class ControllerConfig:
    tau0: float = 0.5
    step: float = 0.05
    interval: int = 5
    tau_min: float = 0.05
    tau_max: float = 0.95
    explore_std: float = 0.1
    hidden: int = 8
    lr: float = 0.01
    baseline_decay: float = 0.9


@dataclass
class ControllerState:
    tau: float
    params: list[Tensor]
    opt: OptimizerState
    baseline: float = 0.0
    prev_acc: float | None = None
    prev_loss: float | None = None
    history: list[dict] = field(default_factory=list)


class ThresholdController:
    """REINFORCE policy that nudges the edge threshold every few epochs.

    The state is ``[mean(u), std(u), d_acc, d_loss]``; the policy outputs
    ``a = sigmoid(mlp(s))`` and the threshold moves by ``(2a - 1) * step``.
    """

    def __init__(self, cfg: ControllerConfig, rng: np.random.Generator):
        self.cfg = cfg
        params = [
            glorot(rng, 4, cfg.hidden, "ctrl.W1"),
            parameter(np.zeros(cfg.hidden), "ctrl.b1"),
            # zero output layer: the untrained policy is neutral (a = 0.5) in every state
            parameter(np.zeros((cfg.hidden, 1)), "ctrl.W2"),
            parameter(np.zeros(1), "ctrl.b2"),
        ]
        self.state = ControllerState(tau=cfg.tau0, params=params, opt=OptimizerState(lr=cfg.lr))

    @property
    def tau(self) -> float:
        return self.state.tau

    def observe(self, embeddings, val_acc: float, total_loss: float) -> np.ndarray:
        u = np.asarray(embeddings, dtype=np.float64)
        st = self.state
        d_acc = 0.0 if st.prev_acc is None else val_acc - st.prev_acc
        d_loss = 0.0 if st.prev_loss is None else total_loss - st.prev_loss
        st.prev_acc, st.prev_loss = float(val_acc), float(total_loss)
        return np.array([u.mean(), u.std(), d_acc, d_loss])

    def _policy(self, tape: Tape, s) -> Tensor:
        W1, b1, W2, b2 = self.state.params
        x = Tensor(np.asarray(s, dtype=np.float64).reshape(1, 4))
        z = tape.tanh(tape.add(tape.matmul(x, W1), b1))
        return tape.sigmoid(tape.add(tape.matmul(z, W2), b2))

    def policy_mean(self, s) -> float:
        return float(self._policy(Tape(enabled=False), s).value[0, 0])

    def act(self, s, rng: np.random.Generator | None = None) -> tuple[float, float]:
        """Sample (train, ``rng`` given) or take the mean action; returns ``(a, tau)``."""
        a = self.policy_mean(s)
        if rng is not None:
            a = float(np.clip(rng.normal(a, self.cfg.explore_std), 1e-6, 1.0 - 1e-6))
        self.state.tau = step_tau(self.state.tau, a, self.cfg)
        return a, self.state.tau

    def update(self, trajectory) -> None:
        """One policy-gradient step on ``[(s, a, reward), ...]``."""
        if not trajectory:
            return
        st = self.state
        var = self.cfg.explore_std**2
        tape = Tape()
        total = None
        advantages = [r - st.baseline for _, _, r in trajectory]
        for (s, a, _), adv in zip(trajectory, advantages):
            mu = self._policy(tape, s)
            # -adv * log N(a; mu, std) up to a constant
            diff = tape.sub(Tensor(np.full((1, 1), a)), mu)
            term = tape.scale(tape.sum(tape.mul(diff, diff)), adv / (2.0 * var))
            total = term if total is None else tape.add(total, term)
        for p in st.params:
            p.zero_grad()
        backward(tape, total)
        optimizer_step(st.params, st.opt)
        for _, _, r in trajectory:
            st.baseline = self.cfg.baseline_decay * st.baseline + (1.0 - self.cfg.baseline_decay) * r


def step_tau(tau: float, a: float, cfg: ControllerConfig) -> float:
    return float(np.clip(tau + (2.0 * a - 1.0) * cfg.step, cfg.tau_min, cfg.tau_max))


def oracle_scores(labels) -> np.ndarray:
    """Ground-truth stand-in for the predictor output (exact 0/1 per node)."""
    return np.asarray(labels, dtype=np.float64).reshape(-1, 1)


def similarity_from_scores(scores, edges) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return 1.0 - np.abs(s[edges[:, 0]] - s[edges[:, 1]])

