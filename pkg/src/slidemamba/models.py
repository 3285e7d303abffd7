"""Model assembly: stacked dual-branch blocks with global mean pooling and
an MLP head, plus the comparison baselines.

model_kind selects the forward composition, not the parameter set: every
block-based kind instantiates identical parameters for a given config and
seed, so e.g. fixed_sum_hybrid with fixed_alpha = 0 reproduces gnn_only
exactly. mil_meanpool is a separate minimal model (projection, pooling,
head).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .diffcore import (Linear, MLP, RowIndexPlan, Tensor, apply_entries,
                       load_checkpoint, save_checkpoint)
from .errors import ConfigError, ContractError, ShapeError
from .fusion import SlideMambaBlock
from .graphbuild import TileGraph, positional_encodings, raster_order
from .ssm import SCAN_KERNELS

MODEL_KINDS = ("slidemamba", "gnn_only", "mamba_only", "fixed_sum_hybrid", "mil_meanpool")

_BRANCH_MODE = {
    "slidemamba": "entropy",
    "gnn_only": "sg_only",
    "mamba_only": "mamba_only",
    "fixed_sum_hybrid": "fixed",
}


@dataclass
class ModelConfig:
    model_kind: str = "slidemamba"
    d_features: int = 0          # 0 = infer from the first graph seen
    d_hidden: int = 32
    n_blocks: int = 2
    d_state: int = 8
    pe_dim: int = 16
    dropout: float = 0.1
    fixed_alpha: float = 0.5
    gin_layers: int = 1
    grad_through_alpha: bool = False
    scan_kernel: str = "sequential"
    mil_attention: bool = False
    seed: int = 0

    def validate(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}, "
                              f"got {self.model_kind!r}")
        if self.d_hidden < 2:
            raise ConfigError("d_hidden must be >= 2 (branch entropy needs C >= 2)")
        if self.n_blocks < 1:
            raise ConfigError("n_blocks must be >= 1")
        if not 0.0 <= self.fixed_alpha <= 1.0:
            raise ConfigError(f"fixed_alpha must be in [0, 1], got {self.fixed_alpha}")
        if self.pe_dim < 4 or self.pe_dim % 4:
            raise ConfigError("pe_dim must be a positive multiple of 4")
        if self.d_state < 1:
            raise ConfigError("d_state must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.scan_kernel not in SCAN_KERNELS:
            raise ConfigError(f"scan_kernel must be one of {sorted(SCAN_KERNELS)}")
        if self.d_features < 0:
            raise ConfigError("d_features must be >= 0")
        return self

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**doc).validate()


@dataclass
class GraphTensors:
    """Model-ready arrays for one graph; edges sorted by (dst, src).

    The RowIndexPlan fields precompute segment sums for the gather/scatter
    backward passes, shared across epochs and blocks.
    """

    slide_id: str
    label: int
    features: np.ndarray
    pe: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_feats: np.ndarray
    order: np.ndarray
    plan_src: RowIndexPlan
    plan_dst: RowIndexPlan
    plan_order: RowIndexPlan
    plan_inverse: RowIndexPlan

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]


def prepare_graph(g: TileGraph, pe_dim: int) -> GraphTensors:
    """Precompute per-graph arrays shared across epochs and blocks."""
    pe = g.pos_enc if g.pos_enc.shape[1] == pe_dim else positional_encodings(g.coords, pe_dim)
    if g.edges.size:
        sort = np.lexsort((g.edges[:, 0], g.edges[:, 1]))
        src = g.edges[sort, 0]
        dst = g.edges[sort, 1]
        edge_feats = g.edge_features[sort]
    else:
        src = dst = np.empty(0, dtype=np.intp)
        edge_feats = np.empty((0, 2))
    n = g.n_nodes
    order = raster_order(g.coords)
    return GraphTensors(
        slide_id=g.slide_id, label=int(g.label), features=g.node_features,
        pe=pe, src=src, dst=dst, edge_feats=edge_feats, order=order,
        plan_src=RowIndexPlan(src, n), plan_dst=RowIndexPlan(dst, n),
        plan_order=RowIndexPlan(order, n),
        plan_inverse=RowIndexPlan(np.argsort(order), n),
    )


class DualBranchModel:
    """Stacked blocks, mean pooling, MLP head producing one logit."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        if cfg.d_features < 1:
            raise ConfigError("d_features must be set (>= 1) before building a model")
        if cfg.model_kind == "mil_meanpool":
            raise ConfigError("mil_meanpool is built by MILMeanPool")
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.blocks = [
            SlideMambaBlock(
                cfg.d_features if i == 0 else cfg.d_hidden,
                cfg.d_hidden, cfg.d_state, cfg.pe_dim, rng,
                dropout=cfg.dropout, gin_layers=cfg.gin_layers,
                scan_kernel=cfg.scan_kernel,
                grad_through_alpha=cfg.grad_through_alpha, block_index=i,
            )
            for i in range(cfg.n_blocks)
        ]
        self.head = MLP([cfg.d_hidden, cfg.d_hidden, 1], rng)
        self.dropout_rng = np.random.default_rng(cfg.seed)

    def forward(self, pg: GraphTensors, mode: str, force_alphas=None,
                want_trace: bool = False):
        """Returns (scalar logit tensor, list of FusionTrace)."""
        if pg.features.shape[1] != self.cfg.d_features:
            raise ShapeError(f"graph has {pg.features.shape[1]} feature dims, "
                             f"model expects {self.cfg.d_features}")
        if pg.pe.shape[1] != self.cfg.pe_dim:
            raise ShapeError(f"graph has {pg.pe.shape[1]} positional dims, "
                             f"model expects {self.cfg.pe_dim}")
        branch_mode = _BRANCH_MODE[self.cfg.model_kind]
        x = Tensor(pg.features)
        traces = []
        for i, block in enumerate(self.blocks):
            force = None if force_alphas is None else force_alphas[i]
            x, trace = block.forward(
                x, pg, mode, self.dropout_rng, branch_mode=branch_mode,
                fixed_alpha=self.cfg.fixed_alpha, force_alpha=force,
                want_trace=want_trace)
            if trace is not None:
                traces.append(trace)
        pooled = x.mean(axis=0, keepdims=True)
        logit = self.head(pooled).reshape(())
        return logit, traces

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        for i, block in enumerate(self.blocks):
            out.update(block.named_params(f"block{i}"))
        out.update(self.head.named_params("head"))
        return out

    def buffer_specs(self):
        specs = []
        for i, block in enumerate(self.blocks):
            specs.extend(block.named_buffers(f"block{i}"))
        return specs


class MILMeanPool:
    """Baseline: node projection, mean (or gated-attention) pooling, head."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        if cfg.d_features < 1:
            raise ConfigError("d_features must be set (>= 1) before building a model")
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.node_proj = Linear(cfg.d_features, cfg.d_hidden, rng)
        if cfg.mil_attention:
            self.att_v = Linear(cfg.d_hidden, cfg.d_hidden, rng)
            self.att_w = Linear(cfg.d_hidden, 1, rng)
        self.head = MLP([cfg.d_hidden, cfg.d_hidden, 1], rng)
        self.dropout_rng = np.random.default_rng(cfg.seed)

    def forward(self, pg: GraphTensors, mode: str, force_alphas=None,
                want_trace: bool = False):
        if pg.features.shape[1] != self.cfg.d_features:
            raise ShapeError(f"graph has {pg.features.shape[1]} feature dims, "
                             f"model expects {self.cfg.d_features}")
        h = self.node_proj(Tensor(pg.features))
        if self.cfg.mil_attention:
            scores = self.att_w(self.att_v(h).tanh())          # (n, 1)
            weights = scores.reshape(1, -1).softmax().reshape(-1, 1)
            pooled = (h * weights).sum(axis=0, keepdims=True)
        else:
            pooled = h.mean(axis=0, keepdims=True)
        logit = self.head(pooled).reshape(())
        return logit, []

    def named_params(self) -> dict[str, Tensor]:
        out = dict(self.node_proj.named_params("node_proj"))
        if self.cfg.mil_attention:
            out.update(self.att_v.named_params("att_v"))
            out.update(self.att_w.named_params("att_w"))
        out.update(self.head.named_params("head"))
        return out

    def buffer_specs(self):
        return []


def build_model(cfg: ModelConfig):
    cfg.validate()
    if cfg.model_kind == "mil_meanpool":
        return MILMeanPool(cfg)
    return DualBranchModel(cfg)


def bce_loss(logit: Tensor, label) -> Tensor:
    """Numerically stable binary cross-entropy with logits."""
    y = float(label)
    if y not in (0.0, 1.0):
        raise ContractError(f"label must be 0 or 1, got {label!r}")
    return logit.softplus() - logit * y


def count_params(model) -> int:
    return int(sum(p.data.size for p in model.named_params().values()))


def save_model(path, model, adam=None):
    buffers = {name: getattr(owner, attr) for name, owner, attr in model.buffer_specs()}
    save_checkpoint(path, model.named_params(), buffers=buffers,
                    config=asdict(model.cfg),
                    adam_state=adam.state_dict() if adam is not None else None)


def load_model(path):
    """Rebuild a model from a self-describing checkpoint.

    Returns (model, adam_state_dict_or_None).
    """
    entries, config, adam_state = load_checkpoint(path)
    if config is None:
        raise ConfigError(f"checkpoint {path} has no embedded model config")
    cfg = ModelConfig.from_dict(config)
    model = build_model(cfg)
    apply_entries(entries, model.named_params(), model.buffer_specs())
    return model, adam_state
