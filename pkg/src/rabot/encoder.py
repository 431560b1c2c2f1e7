"""Per-modality projection and multi-head attention fusion of user features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import MODALITIES, Graph
from .numerics import DimensionError, Tape, Tensor, glorot, parameter


@dataclass(frozen=True)
class EncoderConfig:
    latent_dim: int = 128
    heads: int = 4
    attention_scope: str = "modality"  # or "global"
    use_attention: bool = True

    def __post_init__(self):
        if self.latent_dim % 4:
            raise ValueError(f"latent_dim {self.latent_dim} must be divisible by 4")
        if self.heads < 1 or self.latent_dim % self.heads:
            raise ValueError(f"latent_dim {self.latent_dim} must be divisible by heads {self.heads}")
        if self.attention_scope not in ("modality", "global"):
            raise ValueError(f"unknown attention_scope {self.attention_scope!r}")

    @property
    def block_dim(self) -> int:
        return self.latent_dim // 4

    @property
    def head_dim(self) -> int:
        return self.latent_dim // self.heads


class Encoder:
    """Maps a graph's raw node features to the fused n x latent_dim embedding.

    Attention weights from the most recent :meth:`fuse` call are kept in
    ``last_attention`` with shape (n, heads, 4, 4) for the modality scope and
    (heads, n, n) for the global scope.
    """

    def __init__(self, dims: dict[str, int], cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.dims = dict(dims)
        kappa, blk = cfg.latent_dim, cfg.block_dim
        self.proj = {}
        for m in MODALITIES:
            self.proj[m] = (
                glorot(rng, dims[m], blk, f"enc.W_{m}"),
                parameter(np.zeros(blk), f"enc.b_{m}"),
            )
        self.W = glorot(rng, kappa, kappa, "enc.W")
        self.attn: dict[str, Tensor] = {}
        if cfg.use_attention:
            if cfg.attention_scope == "modality":
                self.attn["lift"] = glorot(rng, blk, kappa, "enc.W_lift")
            for name in ("q", "k", "v"):
                self.attn[name] = glorot(rng, kappa, kappa, f"enc.W_{name}")
        self.last_attention: np.ndarray | None = None

    def parameters(self) -> list[Tensor]:
        ps = [t for pair in self.proj.values() for t in pair]
        return ps + [self.W] + list(self.attn.values())

    def project_modalities(self, tape: Tape, g: Graph) -> list[Tensor]:
        out = []
        for m in MODALITIES:
            x = getattr(g, m)
            W, b = self.proj[m]
            if x.shape[1] != W.shape[0]:
                raise DimensionError(f"{m} features have {x.shape[1]} dims, projection expects {W.shape[0]}")
            out.append(tape.add(tape.matmul(Tensor(x), W), b))
        return out

    def fuse(self, tape: Tape, parts: list[Tensor]) -> Tensor:
        cfg = self.cfg
        if len(parts) != 4 or any(p.shape[1] != cfg.block_dim for p in parts):
            raise DimensionError(f"fuse needs four n x {cfg.block_dim} matrices")
        U = tape.matmul(tape.concat(parts, axis=1), self.W)
        if not cfg.use_attention:
            return U
        if cfg.attention_scope == "modality":
            return self._modality_attention(tape, U)
        return self._global_attention(tape, U)

    def _modality_attention(self, tape: Tape, U: Tensor) -> Tensor:
        n = U.shape[0]
        kappa, blk, C, dk = self.cfg.latent_dim, self.cfg.block_dim, self.cfg.heads, self.cfg.head_dim
        chunks = tape.reshape(U, (n * 4, blk))
        lift = self.attn["lift"]

        def heads(W):
            # lift and head projection are both linear, so compose the weights first
            x = tape.matmul(chunks, tape.matmul(lift, W))
            return tape.transpose(tape.reshape(x, (n, 4, C, dk)), (0, 2, 1, 3))  # (n, C, 4, dk)

        Q, K, V = heads(self.attn["q"]), heads(self.attn["k"]), heads(self.attn["v"])
        scores = tape.scale(tape.bmm(Q, tape.transpose(K, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
        A = tape.softmax(scores, axis=-1)  # (n, C, 4, 4)
        self.last_attention = A.value
        # mean over query tokens commutes with the value product
        pooled = tape.bmm(tape.reshape(tape.mean(A, axis=2), (n, C, 1, 4)), V)  # (n, C, 1, dk)
        return tape.reshape(pooled, (n, kappa))

    def _global_attention(self, tape: Tape, U: Tensor) -> Tensor:
        n = U.shape[0]
        kappa, C, dk = self.cfg.latent_dim, self.cfg.heads, self.cfg.head_dim

        def heads(W):
            return tape.transpose(tape.reshape(tape.matmul(U, W), (n, C, dk)), (1, 0, 2))

        Q, K, V = heads(self.attn["q"]), heads(self.attn["k"]), heads(self.attn["v"])
        scores = tape.scale(tape.bmm(Q, tape.transpose(K, (0, 2, 1))), 1.0 / np.sqrt(dk))
        A = tape.softmax(scores, axis=-1)  # (C, n, n)
        self.last_attention = A.value
        out = tape.bmm(A, V)
        return tape.reshape(tape.transpose(out, (1, 0, 2)), (n, kappa))

    def __call__(self, tape: Tape, g: Graph) -> Tensor:
        return self.fuse(tape, self.project_modalities(tape, g))
