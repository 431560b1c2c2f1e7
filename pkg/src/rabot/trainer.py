"""Full-batch training loop for the oversampling + edge-filtering detector."""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .augment import synthesize
from .backbones import Backbone, BackboneConfig, Head, Metrics, Prediction, evaluate, node_loss
from .edgefilter import (
    ControllerConfig,
    SimilarityPredictor,
    ThresholdController,
    all_ones_mask,
    apply_mask,
    edge_loss,
    mask_by_rate,
    pair_similarity,
)
from .encoder import Encoder, EncoderConfig
from .graph import TEST, TRAIN, UNLABELED, VAL, Graph
from .numerics import Tape, Tensor, backward, optimizer_step, OptimizerState

log = logging.getLogger(__name__)


class NumericFailure(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 0.001
    lambda_s: float = 0.5
    lambda_e: float = 0.6
    k: int = 5
    seed: int = 0
    enable_augment: bool = True
    enable_filter: bool = True
    enable_attention: bool = True
    enable_gnn: bool = True
    dynamic_tau: bool = True
    drop_rate: float | None = None  # rank-based filtering at a fixed drop fraction
    train_fraction: float = 1.0
    predictor_hidden: int = 64
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)

    def __post_init__(self):
        if not 0.0 <= self.lambda_s <= 1.0:
            raise ValueError(f"lambda_s must lie in [0, 1], got {self.lambda_s}")
        if self.lambda_e < 0:
            raise ValueError(f"lambda_e must be >= 0, got {self.lambda_e}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.drop_rate is not None and not 0.0 <= self.drop_rate <= 1.0:
            raise ValueError(f"drop_rate must lie in [0, 1], got {self.drop_rate}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class ForwardResult:
    probs: Tensor
    fused: Tensor
    loss: Tensor
    loss_gnn: float
    loss_aug: float
    loss_edge: float
    masks: list
    n_synthetic: int
    batch: object = None


@dataclass
class RunReport:
    seed: int
    curves: list[dict]
    best_epoch: int
    best_val_accuracy: float
    best_val_f1: float
    test_accuracy: float
    test_f1: float
    final_tau: float
    realized_drop_rate: float
    wall_clock: float = 0.0
    filter_log: list[dict] = field(default_factory=list, repr=False)
    augment_trace: list[dict] = field(default_factory=list, repr=False)
    checkpoint: dict | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        """Serializable summary; excludes wall-clock so reruns are byte-identical."""
        return {
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "best_val_accuracy": self.best_val_accuracy,
            "best_val_f1": self.best_val_f1,
            "test_accuracy": self.test_accuracy,
            "test_f1": self.test_f1,
            "final_tau": self.final_tau,
            "realized_drop_rate": self.realized_drop_rate,
            "epochs": self.curves,
        }


class RABot:
    """Encoder, optional message-passing backbone, and per-layer edge scorers."""

    def __init__(self, g: Graph, cfg: TrainConfig, rng: np.random.Generator):
        self.cfg = cfg
        enc_cfg = dataclasses.replace(cfg.encoder, use_attention=cfg.enable_attention and cfg.encoder.use_attention)
        self.encoder = Encoder(g.dims, enc_cfg, rng)
        kappa = enc_cfg.latent_dim
        self.backbone = None
        self.head = None
        self.predictors: list[SimilarityPredictor] = []
        if cfg.enable_gnn:
            self.backbone = Backbone(kappa, len(g.relations), cfg.backbone, rng)
            if cfg.enable_filter or cfg.lambda_e > 0:
                self.predictors = [
                    SimilarityPredictor(self.backbone.dims[l], cfg.predictor_hidden, rng, f"pred{l}")
                    for l in range(cfg.backbone.layers)
                ]
        else:
            self.head = Head(kappa, rng)

    def parameters(self) -> list[Tensor]:
        ps = self.encoder.parameters()
        if self.backbone is not None:
            ps += self.backbone.parameters()
        else:
            ps += self.head.parameters()
        for pred in self.predictors:
            ps += pred.parameters()
        return ps

    def snapshot(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.parameters()]

    def restore(self, values: list[np.ndarray]) -> None:
        for p, v in zip(self.parameters(), values):
            p.value = v.copy()

    def forward(
        self,
        tape: Tape,
        g: Graph,
        tau: float,
        train_nodes: np.ndarray | None,
        augment_rng: np.random.Generator | None = None,
    ) -> ForwardResult:
        cfg = self.cfg
        n = g.n
        fused = self.encoder(tape, g)
        h = fused
        ext_labels = g.labels
        n_syn = 0
        batch = None
        if augment_rng is not None:
            batch = synthesize(fused.value, g.labels, cfg.k, augment_rng, train_nodes)
            if batch.synthetic:
                par = batch.parents
                d = batch.deltas[:, None]
                S = tape.add(
                    tape.mul(tape.gather_rows(fused, par[:, 0]), Tensor(1.0 - d)),
                    tape.mul(tape.gather_rows(fused, par[:, 1]), Tensor(d)),
                )
                h = tape.concat([fused, S], axis=0)
                n_syn = len(batch.synthetic)
                ext_labels = np.concatenate([g.labels, np.full(n_syn, batch.minority)])

        masks = []
        edge_terms = []
        if self.backbone is not None:
            train_mask = np.zeros(n, dtype=bool)
            if train_nodes is not None:
                train_mask[train_nodes] = True
            real = np.arange(n)
            for l in range(cfg.backbone.layers):
                layer_masks = []
                if self.predictors and (cfg.enable_filter or train_nodes is not None):
                    h_real = tape.gather_rows(h, real) if n_syn else h
                    scores = self.predictors[l].node_scores(tape, h_real)
                    ps = [pair_similarity(tape, scores, e) for e in g.relations]
                    if train_nodes is not None:
                        edge_terms.append(edge_loss(tape, ps, g.relations, g.labels, train_mask, warn=False))
                for r, edges in enumerate(g.relations):
                    if not cfg.enable_filter:
                        layer_masks.append(all_ones_mask(edges, r, l))
                    elif cfg.drop_rate is not None:
                        layer_masks.append(mask_by_rate(edges, ps[r], cfg.drop_rate, r, l))
                    else:
                        layer_masks.append(apply_mask(edges, ps[r], tau, r, l))
                masks.append(layer_masks)
                h = self.backbone.layer(tape, l, h, [m.kept_edges for m in layer_masks])
            probs = self.backbone.head(tape, h)
        else:
            probs = self.head(tape, h)

        if train_nodes is None:
            return ForwardResult(probs, fused, Tensor(0.0), 0.0, 0.0, 0.0, masks, n_syn)
        loss_gnn = node_loss(tape, probs, ext_labels, train_nodes)
        lam_s = cfg.lambda_s if n_syn else 0.0
        total = tape.scale(loss_gnn, 1.0 - lam_s)
        loss_aug = 0.0
        if n_syn:
            aug = node_loss(tape, probs, ext_labels, np.arange(n, n + n_syn))
            total = tape.add(total, tape.scale(aug, lam_s))
            loss_aug = float(aug.value)
        loss_edge = 0.0
        if edge_terms:
            le = edge_terms[0]
            for t in edge_terms[1:]:
                le = tape.add(le, t)
            le = tape.scale(le, 1.0 / len(edge_terms))
            loss_edge = float(le.value)
            if cfg.lambda_e > 0:
                total = tape.add(total, tape.scale(le, cfg.lambda_e))
        return ForwardResult(
            probs=probs,
            fused=fused,
            loss=total,
            loss_gnn=float(loss_gnn.value),
            loss_aug=loss_aug,
            loss_edge=loss_edge,
            masks=masks,
            n_synthetic=n_syn,
            batch=batch,
        )

    def predict(self, g: Graph, tau: float) -> Prediction:
        """Deterministic forward without augmentation or gradient recording."""
        out = self.forward(Tape(enabled=False), g, tau, None)
        return Prediction(out.probs.value[: g.n])


def _subsample_train(g: Graph, fraction: float, seed: int) -> np.ndarray:
    train = g.nodes_in(TRAIN)
    if fraction >= 1.0:
        return train
    rng = np.random.default_rng([seed, 3])
    keep = []
    for cls in (0, 1):
        members = train[g.labels[train] == cls]
        if len(members):
            k = max(1, int(round(fraction * len(members))))
            keep.append(rng.choice(members, size=k, replace=False))
    return np.sort(np.concatenate(keep))


def _augment_feasible(g: Graph, train_nodes: np.ndarray, k: int) -> int | None:
    """Effective k for oversampling, or None when it cannot run."""
    y = g.labels[train_nodes]
    counts = [(y == 0).sum(), (y == 1).sum()]
    if min(counts) == 0:
        log.warning("training split holds a single class; oversampling disabled")
        return None
    small = min(counts)
    if small == max(counts):
        return k
    if small < 2:
        log.warning("fewer than 2 minority training nodes; oversampling disabled")
        return None
    if small < k + 1:
        log.warning("only %d minority training nodes; lowering k from %d to %d", small, k, small - 1)
        return small - 1
    return k


def _has_train_pairs(g: Graph, train_nodes: np.ndarray) -> bool:
    inside = np.zeros(g.n, dtype=bool)
    inside[train_nodes] = True
    return any((inside[e[:, 0]] & inside[e[:, 1]]).any() for e in g.relations)


def _cross_dropped(mask, labels) -> int | None:
    if (labels == UNLABELED).any():
        return None
    dropped = mask.edges[~mask.keep]
    return int((labels[dropped[:, 0]] != labels[dropped[:, 1]]).sum())


def train(g: Graph, cfg: TrainConfig, trace: bool = False) -> RunReport:
    """Train on ``g`` and report test metrics at the best-validation epoch."""
    if g.split is None:
        raise ValueError("graph needs a split assignment before training")
    started = time.perf_counter()
    train_nodes = _subsample_train(g, cfg.train_fraction, cfg.seed)
    if len(train_nodes) == 0:
        raise ValueError("no labeled training nodes")
    val_nodes = g.nodes_in(VAL)
    test_nodes = g.nodes_in(TEST)
    if len(val_nodes) == 0:
        log.warning("empty validation split; selecting checkpoints on training accuracy")
        val_nodes = train_nodes

    if cfg.enable_gnn and not _has_train_pairs(g, train_nodes):
        log.warning("no edge joins two training nodes; the edge loss is 0 throughout")
    k_eff = _augment_feasible(g, train_nodes, cfg.k) if cfg.enable_augment else None
    if k_eff is not None and k_eff != cfg.k:
        cfg = cfg.replace(k=k_eff)
    model = RABot(g, cfg, np.random.default_rng(cfg.seed))
    params = model.parameters()
    opt = OptimizerState(lr=cfg.lr)
    aug_rng = np.random.default_rng([cfg.seed, 1]) if k_eff is not None else None
    ctrl_rng = np.random.default_rng([cfg.seed, 2])
    use_controller = cfg.dynamic_tau and cfg.enable_filter and cfg.enable_gnn and cfg.drop_rate is None
    controller = ThresholdController(cfg.controller, np.random.default_rng([cfg.seed, 4]))
    tau = cfg.controller.tau0

    curves: list[dict] = []
    filter_log: list[dict] = []
    augment_trace: list[dict] = []
    best = None
    pending = None
    dropped_total = kept_total = 0

    for epoch in range(1, cfg.epochs + 1):
        for p in params:
            p.zero_grad()
        tape = Tape()
        out = model.forward(tape, g, tau, train_nodes, aug_rng)
        total = float(out.loss.value)
        if not math.isfinite(total):
            raise NumericFailure(f"non-finite loss {total} at epoch {epoch}")
        pred = Prediction(out.probs.value[: g.n])
        val = evaluate(pred, g.labels, val_nodes, warn=False)
        if best is None or val.accuracy > best["val"].accuracy:
            best = {"epoch": epoch, "val": val, "params": model.snapshot(), "tau": tau}

        for layer_masks in out.masks:
            for m in layer_masks:
                dropped_total += m.num_dropped
                kept_total += int(m.keep.sum())
                filter_log.append(
                    {
                        "epoch": epoch,
                        "relation": g.relation_names[m.relation],
                        "layer": m.layer,
                        "tau": m.tau,
                        "kept_edges": int(m.keep.sum()),
                        "dropped_edges": m.num_dropped,
                        "cross_class_dropped": _cross_dropped(m, g.labels),
                    }
                )
        if trace and out.batch is not None:
            for s in out.batch.synthetic:
                augment_trace.append({"epoch": epoch, "parents": list(s.parents), "delta": s.delta})

        curves.append(
            {
                "epoch": epoch,
                "loss_total": total,
                "loss_gnn": out.loss_gnn,
                "loss_aug": out.loss_aug,
                "loss_edge": out.loss_edge,
                "val_acc": val.accuracy,
                "val_f1": val.f1,
                "tau": tau,
                "n_synthetic": out.n_synthetic,
            }
        )

        backward(tape, out.loss)
        optimizer_step(params, opt)

        if use_controller and epoch % cfg.controller.interval == 0:
            s = controller.observe(out.fused.value, val.accuracy, total)
            if pending is not None:
                controller.update([(pending[0], pending[1], float(s[2]))])
            a, tau = controller.act(s, ctrl_rng)
            pending = (s, a)

    model.restore(best["params"])
    final = model.predict(g, best["tau"])
    test = evaluate(final, g.labels, test_nodes) if len(test_nodes) else Metrics(float("nan"), float("nan"))
    total_edges = dropped_total + kept_total
    return RunReport(
        seed=cfg.seed,
        curves=curves,
        best_epoch=best["epoch"],
        best_val_accuracy=best["val"].accuracy,
        best_val_f1=best["val"].f1,
        test_accuracy=test.accuracy,
        test_f1=test.f1,
        final_tau=tau,
        realized_drop_rate=dropped_total / total_edges if total_edges else 0.0,
        wall_clock=time.perf_counter() - started,
        filter_log=filter_log,
        augment_trace=augment_trace,
        checkpoint={"params": best["params"], "tau": best["tau"], "model": model},
    )


def evaluate_checkpoint(report: RunReport, g: Graph) -> Metrics:
    """Re-run the stored best checkpoint on the test split."""
    ckpt = report.checkpoint
    model: RABot = ckpt["model"]
    model.restore(ckpt["params"])
    return evaluate(model.predict(g, ckpt["tau"]), g.labels, g.nodes_in(TEST))
