"""Short-range branch: GIN message passing with additive edge terms.

Each layer computes

    h_v' = MLP((1 + eps) * h_v + sum_{u in N(v)} ReLU(h_u + edge_proj(e_uv)))

followed by batchnorm, ReLU and dropout. Edge features enter as additive
per-message terms, so with edge_proj = 0, message ReLU off, identity MLP and
eps = 0 the layer reduces to h + A h. Aggregation follows the caller's edge
order; sorting edges by (destination, source) makes per-node summation order
deterministic.
"""

from __future__ import annotations

import numpy as np

from .diffcore import BatchNorm1d, Dropout, Linear, MLP, Tensor
from .diffcore.nn import check_mode
from .errors import ShapeError


class GINLayer:
    def __init__(self, d_hidden: int, rng: np.random.Generator, dropout: float = 0.1,
                 message_relu: bool = True):
        self.eps = Tensor(np.zeros(()), requires_grad=True)
        self.mlp = MLP([d_hidden, d_hidden, d_hidden], rng)
        self.edge_proj = Linear(2, d_hidden, rng)
        self.bn = BatchNorm1d(d_hidden)
        self.dropout = Dropout(dropout)
        self.message_relu = message_relu

    def forward(self, h: Tensor, src: np.ndarray, dst: np.ndarray,
                edge_feats: np.ndarray, mode: str, rng: np.random.Generator,
                post: bool = True, plan_src=None, plan_dst=None) -> Tensor:
        """One message-passing step; ``post=False`` skips bn/ReLU/dropout."""
        check_mode(mode)
        n = h.shape[0]
        if src.shape != dst.shape:
            raise ShapeError("edge source/destination lists differ in length")
        if edge_feats.shape[0] != src.shape[0]:
            raise ShapeError(f"{edge_feats.shape[0]} edge feature rows for "
                             f"{src.shape[0]} edges")
        if src.size:
            e_hat = self.edge_proj(Tensor(np.asarray(edge_feats, dtype=np.float64)))
            msg = h.gather_rows(src, plan=plan_src) + e_hat
            if self.message_relu:
                msg = msg.relu()
            agg = msg.scatter_add_rows(dst, n, plan=plan_dst)
            combined = h * (self.eps + 1.0) + agg
        else:
            combined = h * (self.eps + 1.0)
        out = self.mlp(combined)
        if post:
            out = self.bn(out, mode).relu()
            out = self.dropout(out, mode, rng)
        return out

    def named_params(self, prefix: str):
        yield f"{prefix}.eps", self.eps
        yield from self.mlp.named_params(f"{prefix}.mlp")
        yield from self.edge_proj.named_params(f"{prefix}.edge_proj")
        yield from self.bn.named_params(f"{prefix}.bn")

    def named_buffers(self, prefix: str):
        yield from self.bn.named_buffers(f"{prefix}.bn")


class SGBranch:
    """A stack of GIN layers (default one per block); zero layers = identity."""

    def __init__(self, d_hidden: int, n_layers: int, rng: np.random.Generator,
                 dropout: float = 0.1):
        self.layers = [GINLayer(d_hidden, rng, dropout=dropout) for _ in range(n_layers)]

    def forward(self, h: Tensor, pg, mode: str, rng: np.random.Generator) -> Tensor:
        for layer in self.layers:
            h = layer.forward(h, pg.src, pg.dst, pg.edge_feats, mode, rng,
                              plan_src=pg.plan_src, plan_dst=pg.plan_dst)
        return h

    def named_params(self, prefix: str):
        for j, layer in enumerate(self.layers):
            name = f"{prefix}.gin" if j == 0 else f"{prefix}.gin{j}"
            yield from layer.named_params(name)

    def named_buffers(self, prefix: str):
        for j, layer in enumerate(self.layers):
            name = f"{prefix}.gin" if j == 0 else f"{prefix}.gin{j}"
            yield from layer.named_buffers(name)
