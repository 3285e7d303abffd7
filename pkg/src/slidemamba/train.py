"""Training/evaluation harness: per-fold Adam training with early stopping
on validation average precision, test metrics per fold, and deterministic
artifact emission (metrics.json, folds.csv, loss_curve.csv,
fusion_trace.csv, per-fold checkpoints).

Each fold trains on 70% and validates on 30% of the non-test data
(stratified); the fold's test set comes from the global stratified k-fold
assignment. All randomness derives from the config seed, so identical
invocations produce byte-identical outputs.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .diffcore import Adam
from .errors import ConfigError, NumericError
from .graphbuild import load_graph, load_manifest
from .metrics import (average_precision, roc_auc, sens_spec, stratified_kfold,
                      stratified_split)
from .models import (GraphTensors, ModelConfig, bce_loss, build_model,
                     prepare_graph, save_model)

METRIC_NAMES = ("average_precision", "roc_auc", "sensitivity", "specificity")


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    manifest: str = ""
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 1
    folds: int = 5
    early_stop_patience: int = 10
    seed: int = 0
    emit_fusion_trace: bool = False
    plots: bool = True

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if not self.manifest:
            raise ConfigError("a dataset manifest path is required")
        self.model.validate()
        return self

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        model_doc = doc.pop("model", {})
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(model=ModelConfig.from_dict(model_doc), **doc)


@dataclass
class MetricsReport:
    per_fold: list
    aggregate: dict

    @classmethod
    def from_folds(cls, per_fold: list) -> "MetricsReport":
        aggregate = {}
        for name in METRIC_NAMES:
            values = [f[name] for f in per_fold]
            mean = float(np.mean(values))
            sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
            aggregate[name] = {"mean": mean, "sd": sd}
        return cls(per_fold=per_fold, aggregate=aggregate)


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def load_dataset(manifest_path: str, pe_dim: int):
    """Load every graph in the manifest; returns (records, graphs, labels)."""
    records = load_manifest(manifest_path)
    if not records:
        raise ConfigError(f"manifest {manifest_path} lists no graphs")
    graphs = [prepare_graph(load_graph(r["graph_path"]), pe_dim) for r in records]
    labels = np.array([r["label"] for r in records], dtype=int)
    return records, graphs, labels


def _snapshot(params, buffer_specs):
    return ({name: p.data.copy() for name, p in params.items()},
            [(owner, attr, np.asarray(getattr(owner, attr)).copy())
             for _, owner, attr in buffer_specs])


def _restore(params, snapshot):
    values, buffers = snapshot
    for name, p in params.items():
        p.data = values[name].copy()
    for owner, attr, value in buffers:
        setattr(owner, attr, value.copy())


def eval_scores(model, graphs, indices, want_trace: bool = False):
    """Sigmoid scores (and optional fusion trace rows) in eval mode."""
    scores = np.empty(len(indices))
    trace_rows = []
    for pos, gi in enumerate(indices):
        logit, traces = model.forward(graphs[gi], "eval", want_trace=want_trace)
        scores[pos] = sigmoid(logit.item())
        for tr in traces:
            trace_rows.append({
                "slide_id": graphs[gi].slide_id, "block": tr.block_index,
                "h_sg": tr.h_sg, "h_mamba": tr.h_mamba, "alpha": tr.alpha,
            })
    return scores, trace_rows


def train_fold(config: TrainConfig, graphs, labels, train_idx, val_idx, fold: int):
    """Train one fold; returns (model, best_epoch, loss_rows)."""
    model_cfg = replace(config.model, seed=config.model.seed + fold)
    model = build_model(model_cfg)
    model.dropout_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=(config.seed, fold, 1)))
    epoch_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=(config.seed, fold, 2)))
    params = model.named_params()
    adam = Adam(params, lr=config.lr)
    scale = 1.0 / config.batch_size

    best_ap = -np.inf
    best_epoch = 0
    best_state = _snapshot(params, model.buffer_specs())
    stale = 0
    loss_rows = []
    for epoch in range(1, config.epochs + 1):
        order = train_idx[epoch_rng.permutation(len(train_idx))]
        total_loss = 0.0
        pending = 0
        for step, gi in enumerate(order):
            logit, _ = model.forward(graphs[gi], "train")
            loss = bce_loss(logit, labels[gi])
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss at fold {fold} epoch {epoch} step {step} "
                    f"(slide {graphs[gi].slide_id})")
            (loss * scale).backward()
            total_loss += value
            pending += 1
            if pending == config.batch_size:
                adam.step()
                adam.zero_grad()
                pending = 0
        if pending:
            adam.step()
            adam.zero_grad()
        train_loss = total_loss / len(order)
        val_scores, _ = eval_scores(model, graphs, val_idx)
        val_ap = average_precision(val_scores, labels[val_idx])
        loss_rows.append({"fold": fold, "epoch": epoch,
                          "train_loss": train_loss, "val_ap": val_ap})
        if val_ap > best_ap:
            best_ap = val_ap
            best_epoch = epoch
            best_state = _snapshot(params, model.buffer_specs())
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    _restore(params, best_state)
    return model, best_epoch, loss_rows


def train(config: TrainConfig, outdir: str):
    """Run the full k-fold protocol; returns (MetricsReport, artifacts).

    artifacts: fold_rows, loss_rows, trace_rows, fold_scores (per fold:
    (scores, labels)) for reporting.
    """
    config.validate()
    os.makedirs(outdir, exist_ok=True)
    records, graphs, labels = load_dataset(config.manifest, config.model.pe_dim)
    if config.model.d_features == 0:
        config = replace(config, model=replace(
            config.model, d_features=graphs[0].features.shape[1]))
    folds = stratified_kfold(labels, config.folds, config.seed)

    fold_rows = [{"graph_path": rec["graph_path"], "slide_id": graphs[i].slide_id,
                  "label": int(labels[i]), "fold": int(folds[i])}
                 for i, rec in enumerate(records)]
    per_fold = []
    loss_rows = []
    trace_rows = []
    fold_scores = []
    for f in range(config.folds):
        test_idx = np.flatnonzero(folds == f)
        rest_idx = np.flatnonzero(folds != f)
        train_idx, val_idx = stratified_split(rest_idx, labels, 0.3,
                                              seed=(config.seed, f))
        model, best_epoch, fold_loss_rows = train_fold(
            config, graphs, labels, train_idx, val_idx, f)
        loss_rows.extend(fold_loss_rows)
        scores, fold_traces = eval_scores(model, graphs, test_idx,
                                          want_trace=config.emit_fusion_trace)
        trace_rows.extend(fold_traces)
        y_test = labels[test_idx]
        sens, spec = sens_spec(scores, y_test)
        per_fold.append({
            "fold": f,
            "average_precision": average_precision(scores, y_test),
            "roc_auc": roc_auc(scores, y_test),
            "sensitivity": sens,
            "specificity": spec,
            "n_test": int(test_idx.size),
            "n_train": int(train_idx.size),
            "n_val": int(val_idx.size),
            "best_epoch": best_epoch,
        })
        fold_scores.append((scores, y_test))
        save_model(os.path.join(outdir, f"checkpoint_fold{f}.json"), model)

    report = MetricsReport.from_folds(per_fold)
    artifacts = {"fold_rows": fold_rows, "loss_rows": loss_rows,
                 "trace_rows": trace_rows, "fold_scores": fold_scores,
                 "config": _config_dict(config)}
    return report, artifacts


def evaluate(model, manifest_path: str, want_trace: bool = False):
    """Score every manifest graph with a trained model.

    Returns (metrics dict, score rows, trace rows).
    """
    records, graphs, labels = load_dataset(manifest_path, model.cfg.pe_dim)
    indices = np.arange(len(records))
    scores, trace_rows = eval_scores(model, graphs, indices,
                                     want_trace=want_trace)
    sens, spec = sens_spec(scores, labels)
    metrics = {
        "average_precision": average_precision(scores, labels),
        "roc_auc": roc_auc(scores, labels),
        "sensitivity": sens,
        "specificity": spec,
        "n_graphs": int(len(records)),
    }
    score_rows = [{"slide_id": graphs[i].slide_id, "label": int(labels[i]),
                   "score": float(scores[i])} for i in indices]
    return metrics, score_rows, trace_rows


def _config_dict(config: TrainConfig) -> dict:
    doc = asdict(config)
    doc["model"] = asdict(config.model)
    return doc
