"""Dual-branch tile-graph models: GIN message passing plus a selective
state-space sequence branch, fused per block by entropy-based confidence
weights, with a synthetic planted-signal dataset and a k-fold harness."""

__version__ = "0.1.0"
