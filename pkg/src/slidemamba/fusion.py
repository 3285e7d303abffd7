"""Entropy-based confidence fusion and the dual-branch block.

Each branch output is softmaxed over its feature axis; the normalized
entropy of those rows (averaged over nodes) gives a per-branch confidence
w = 1 - H, and the fusion weight is alpha = w_mamba / (w_sg + w_mamba)
(0.5 when both confidences vanish). The fused representation
(1 - alpha) * X_SG + alpha * X_Mamba is refined by an MLP with a residual
connection and batch normalization.

Alpha is a constant during gradient accumulation unless
``grad_through_alpha`` is set; gradcheck callers can also pin it via
``force_alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import BatchNorm1d, Linear, MLP, Tensor
from .diffcore.nn import check_mode
from .errors import ContractError, ShapeError
from .gnn import SGBranch
from .ssm import MambaBranch

DEGENERATE_EPS = 1e-12


@dataclass
class FusionTrace:
    """Per-block record of branch entropies and the fusion weight."""

    block_index: int
    h_sg: float
    h_mamba: float
    w_sg: float
    w_mamba: float
    alpha: float


def normalized_entropy(p) -> float:
    """Shannon entropy of a probability vector scaled to [0, 1] by log C."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 2:
        raise ContractError(f"normalized_entropy needs C >= 2 classes, got shape {p.shape}")
    if p.min() < 0.0:
        raise ContractError("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ContractError(f"probabilities must sum to 1, got {p.sum()!r}")
    return float(_entropy_rows(p[None, :])[0])


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    """Row-wise normalized entropy; zero terms contribute zero."""
    c = p.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return np.clip(-plogp.sum(axis=-1) / np.log(c), 0.0, 1.0)


def entropy_confidence(y_sg: np.ndarray, y_mamba: np.ndarray,
                       block_index: int = 0) -> FusionTrace:
    """Fusion weight from two row-stochastic branch outputs."""
    y_sg = np.asarray(y_sg, dtype=np.float64)
    y_mamba = np.asarray(y_mamba, dtype=np.float64)
    if y_sg.shape != y_mamba.shape:
        raise ShapeError(f"branch output shapes differ: {y_sg.shape} vs {y_mamba.shape}")
    if y_sg.ndim != 2 or y_sg.shape[1] < 2:
        raise ContractError("entropy_confidence needs n x C rows with C >= 2")
    for name, arr in (("sg", y_sg), ("mamba", y_mamba)):
        if arr.min() < 0.0 or np.abs(arr.sum(axis=1) - 1.0).max() > 1e-6:
            raise ContractError(f"{name} rows are not probability vectors")
    h_sg = float(_entropy_rows(y_sg).mean())
    h_mamba = float(_entropy_rows(y_mamba).mean())
    w_sg = 1.0 - h_sg
    w_mamba = 1.0 - h_mamba
    denom = w_sg + w_mamba
    alpha = 0.5 if denom <= DEGENERATE_EPS else w_mamba / denom
    return FusionTrace(block_index, h_sg, h_mamba, w_sg, w_mamba, alpha)


def _entropy_mean_tensor(x: Tensor) -> Tensor:
    """Mean normalized entropy of softmax(x) rows, differentiable.

    Uses H = (logsumexp(x) - sum p * x) / log C per row, which avoids
    log(0) for extreme logits.
    """
    c = x.shape[-1]
    shift = Tensor(x.data.max(axis=-1, keepdims=True))
    lse = (x - shift).exp().sum(axis=-1, keepdims=True).log() + shift
    p = x.softmax()
    h_rows = (lse - (p * x).sum(axis=-1, keepdims=True)) * (1.0 / np.log(c))
    return h_rows.mean()


class SlideMambaBlock:
    """One dual-branch block: project, run both branches, fuse, refine."""

    def __init__(self, d_in: int, d_hidden: int, d_state: int, pe_dim: int,
                 rng: np.random.Generator, dropout: float = 0.1,
                 gin_layers: int = 1, scan_kernel: str = "sequential",
                 grad_through_alpha: bool = False, block_index: int = 0):
        if d_hidden < 2:
            raise ContractError("d_hidden must be >= 2 so branch entropy is defined")
        self.block_index = block_index
        self.grad_through_alpha = grad_through_alpha
        self.node_proj = Linear(d_in, d_hidden, rng)
        self.sg = SGBranch(d_hidden, gin_layers, rng, dropout=dropout)
        self.mamba = MambaBranch(d_hidden, pe_dim, d_state, rng,
                                 dropout=dropout, scan_kernel=scan_kernel)
        self.mlp = MLP([d_hidden, d_hidden, d_hidden], rng)
        self.bn = BatchNorm1d(d_hidden)

    def forward(self, x: Tensor, pg, mode: str, rng: np.random.Generator,
                branch_mode: str = "entropy", fixed_alpha: float = 0.5,
                force_alpha: float | None = None, want_trace: bool = False):
        """Returns (x_out, FusionTrace or None).

        ``pg`` carries the graph arrays (src/dst edge lists sorted by
        destination, raw edge features, positional encodings, raster order).
        ``branch_mode``: entropy | fixed | sg_only | mamba_only.
        """
        check_mode(mode)
        x_node = self.node_proj(x)
        trace = None

        if branch_mode == "sg_only":
            x_fused = self.sg.forward(x_node, pg, mode, rng)
        elif branch_mode == "mamba_only":
            x_fused = self.mamba(x_node, pg.pe, pg.order, mode, rng,
                                 plan_order=pg.plan_order,
                                 plan_inverse=pg.plan_inverse)
        elif branch_mode in ("entropy", "fixed"):
            x_sg = self.sg.forward(x_node, pg, mode, rng)
            x_mamba = self.mamba(x_node, pg.pe, pg.order, mode, rng,
                                 plan_order=pg.plan_order,
                                 plan_inverse=pg.plan_inverse)
            alpha_t = None
            if force_alpha is not None:
                alpha = float(force_alpha)
            elif branch_mode == "fixed":
                alpha = float(fixed_alpha)
                if want_trace:
                    trace = entropy_confidence(
                        _softmax_rows(x_sg.data), _softmax_rows(x_mamba.data),
                        self.block_index)
                    trace.alpha = alpha
            elif self.grad_through_alpha:
                h_sg_t = _entropy_mean_tensor(x_sg)
                h_mamba_t = _entropy_mean_tensor(x_mamba)
                w_sg_t = 1.0 - h_sg_t
                w_mamba_t = 1.0 - h_mamba_t
                denom = w_sg_t + w_mamba_t
                if denom.item() <= DEGENERATE_EPS:
                    alpha = 0.5
                else:
                    alpha_t = w_mamba_t / denom
                    alpha = alpha_t.item()
                trace = FusionTrace(self.block_index, h_sg_t.item(), h_mamba_t.item(),
                                    1.0 - h_sg_t.item(), 1.0 - h_mamba_t.item(), alpha)
            else:
                trace = entropy_confidence(
                    _softmax_rows(x_sg.data), _softmax_rows(x_mamba.data),
                    self.block_index)
                alpha = trace.alpha
            if alpha_t is not None:
                x_fused = x_sg * (1.0 - alpha_t) + x_mamba * alpha_t
            else:
                x_fused = x_sg * (1.0 - alpha) + x_mamba * alpha
        else:
            raise ContractError(f"unknown branch_mode {branch_mode!r}")

        x_out = self.bn(self.mlp(x_fused) + x_fused, mode)
        return x_out, trace

    def named_params(self, prefix: str):
        yield from self.node_proj.named_params(f"{prefix}.node_proj")
        yield from self.sg.named_params(prefix)
        yield from self.mamba.named_params(f"{prefix}.ssm")
        yield from self.mlp.named_params(f"{prefix}.mlp")
        yield from self.bn.named_params(f"{prefix}.bn")

    def named_buffers(self, prefix: str):
        yield from self.sg.named_buffers(prefix)
        yield from self.mamba.named_buffers(f"{prefix}.ssm")
        yield from self.bn.named_buffers(f"{prefix}.bn")


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)
