"""Command-line interface.

Subcommands: synth, build-graph, train, eval, gradcheck, benchscan.
Every config key can come from a JSON config file (--config) and any CLI
flag overrides the file. Exit codes: 0 success, 2 config error, 3 data
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, fields

import numpy as np

from .diffcore import finite_difference_check
from .errors import (ConfigError, ContractError, DataError, NumericError,
                     ShapeError, UndefinedMetricError)
from .graphbuild import build_graph, load_feature_csv, save_graph
from .models import (MODEL_KINDS, ModelConfig, bce_loss, build_model,
                     load_model, prepare_graph)
from .ssm import parallel_scan, sequential_scan
from .synthdata import SynthSpec, generate
from .train import TrainConfig, evaluate, train
from . import report as report_mod

BOOL = argparse.BooleanOptionalAction


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


def _merge(file_doc: dict, overrides: dict) -> dict:
    doc = dict(file_doc)
    for key, value in overrides.items():
        if value is not None:
            doc[key] = value
    return doc


# -- synth ---------------------------------------------------------------

def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a planted-signal synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON file with SynthSpec keys")
    p.add_argument("--n-graphs", type=int)
    p.add_argument("--nodes-min", type=int)
    p.add_argument("--nodes-max", type=int)
    p.add_argument("--grid-side", type=int)
    p.add_argument("--d-features", type=int)
    p.add_argument("--task", choices=("local", "global", "mixed"))
    p.add_argument("--signal-strength", type=float)
    p.add_argument("--cluster-size", type=int)
    p.add_argument("--positive-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--knn-k", type=int)
    p.add_argument("--pe-dim", type=int)
    p.set_defaults(func=_run_synth)


def _run_synth(args) -> int:
    doc = _merge(_load_config_file(args.config), {
        "n_graphs": args.n_graphs, "nodes_min": args.nodes_min,
        "nodes_max": args.nodes_max, "grid_side": args.grid_side,
        "d_features": args.d_features, "task": args.task,
        "signal_strength": args.signal_strength,
        "cluster_size": args.cluster_size,
        "positive_fraction": args.positive_fraction, "seed": args.seed,
        "knn_k": args.knn_k, "pe_dim": args.pe_dim,
    })
    known = {f.name for f in fields(SynthSpec)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
    spec = SynthSpec(**doc)
    manifest = generate(spec, args.out)
    print(f"wrote {spec.n_graphs} graphs, manifest at {manifest}")
    return 0


# -- build-graph -----------------------------------------------------------

def _add_build_graph(sub):
    p = sub.add_parser("build-graph", help="build a tile graph from a feature CSV")
    p.add_argument("--features", required=True, help="CSV: tile_x,tile_y,f0,...")
    p.add_argument("--out", required=True, help="output graph JSON path")
    p.add_argument("--label", type=int, default=0, choices=(0, 1))
    p.add_argument("--slide-id", default=None)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--pe-dim", type=int, default=16)
    p.set_defaults(func=_run_build_graph)


def _run_build_graph(args) -> int:
    coords, feats = load_feature_csv(args.features)
    slide_id = args.slide_id or os.path.splitext(os.path.basename(args.features))[0]
    graph = build_graph(coords, feats, k=args.k, pe_dim=args.pe_dim,
                        label=args.label, slide_id=slide_id)
    save_graph(args.out, graph)
    print(f"wrote {args.out}: {graph.n_nodes} nodes, {graph.n_edges} edges")
    return 0


# -- train -----------------------------------------------------------------

_MODEL_FLAGS = ("model_kind", "d_features", "d_hidden", "n_blocks", "d_state",
                "pe_dim", "dropout", "fixed_alpha", "gin_layers",
                "grad_through_alpha", "scan_kernel", "mil_attention")


def _add_model_flags(p):
    p.add_argument("--model-kind", choices=MODEL_KINDS)
    p.add_argument("--d-features", type=int)
    p.add_argument("--d-hidden", type=int)
    p.add_argument("--n-blocks", type=int)
    p.add_argument("--d-state", type=int)
    p.add_argument("--pe-dim", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--fixed-alpha", type=float)
    p.add_argument("--gin-layers", type=int)
    p.add_argument("--grad-through-alpha", action=BOOL, default=None)
    p.add_argument("--scan-kernel", choices=("parallel", "sequential"))
    p.add_argument("--mil-attention", action=BOOL, default=None)
    p.add_argument("--model-seed", type=int)


def _add_train(sub):
    p = sub.add_parser("train", help="k-fold training on a dataset manifest")
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--outdir", required=True)
    p.add_argument("--config", help="JSON file mirroring TrainConfig")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--patience", type=int, dest="early_stop_patience")
    p.add_argument("--seed", type=int)
    p.add_argument("--emit-fusion-trace", action=BOOL, default=None)
    p.add_argument("--plots", action=BOOL, default=None)
    _add_model_flags(p)
    p.set_defaults(func=_run_train)


def _train_config_from_args(args) -> TrainConfig:
    doc = _load_config_file(args.config)
    model_doc = dict(doc.get("model", {}))
    for key in _MODEL_FLAGS:
        value = getattr(args, key)
        if value is not None:
            model_doc[key] = value
    if args.model_seed is not None:
        model_doc["seed"] = args.model_seed
    doc = _merge(doc, {
        "manifest": args.manifest, "lr": args.lr, "epochs": args.epochs,
        "batch_size": args.batch_size, "folds": args.folds,
        "early_stop_patience": args.early_stop_patience, "seed": args.seed,
        "emit_fusion_trace": args.emit_fusion_trace, "plots": args.plots,
    })
    doc["model"] = model_doc
    return TrainConfig.from_dict(doc)


def _run_train(args) -> int:
    config = _train_config_from_args(args).validate()
    report, artifacts = train(config, args.outdir)
    report_mod.emit_training_artifacts(args.outdir, report, artifacts,
                                       plots=config.plots)
    for name, agg in report.aggregate.items():
        print(f"{name}: {agg['mean']:.4f} +/- {agg['sd']:.4f}")
    print(f"artifacts in {args.outdir}")
    return 0


# -- eval --------------------------------------------------------------------

def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--emit-fusion-trace", action=BOOL, default=False)
    p.add_argument("--plots", action=BOOL, default=True)
    p.set_defaults(func=_run_eval)


def _run_eval(args) -> int:
    model, _ = load_model(args.checkpoint)
    metrics, score_rows, trace_rows = evaluate(model, args.manifest,
                                               want_trace=args.emit_fusion_trace)
    os.makedirs(args.outdir, exist_ok=True)
    doc = {"metrics": metrics, "model_config": asdict(model.cfg),
           "checkpoint": args.checkpoint, "manifest": args.manifest}
    with open(os.path.join(args.outdir, "metrics.json"), "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    report_mod.write_csv(os.path.join(args.outdir, "scores.csv"), score_rows,
                         report_mod.SCORE_COLUMNS)
    if trace_rows:
        report_mod.write_csv(os.path.join(args.outdir, "fusion_trace.csv"),
                             trace_rows, report_mod.TRACE_COLUMNS)
    if args.plots:
        scores = np.array([r["score"] for r in score_rows])
        labels = np.array([r["label"] for r in score_rows])
        report_mod.render_training_figures(args.outdir, [], [(scores, labels)],
                                           trace_rows)
    for name in ("average_precision", "roc_auc", "sensitivity", "specificity"):
        print(f"{name}: {metrics[name]:.4f}")
    return 0


# -- gradcheck -----------------------------------------------------------------

def _add_gradcheck(sub):
    p = sub.add_parser("gradcheck",
                       help="finite-difference gradient check per model kind")
    p.add_argument("--model-kind", default="all",
                   choices=("all",) + MODEL_KINDS)
    p.add_argument("--n-nodes", type=int, default=12)
    p.add_argument("--d-features", type=int, default=8)
    p.add_argument("--d-hidden", type=int, default=8)
    p.add_argument("--n-blocks", type=int, default=2)
    p.add_argument("--d-state", type=int, default=4)
    p.add_argument("--pe-dim", type=int, default=8)
    p.add_argument("--gin-layers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=2,
                   help="coordinates sampled per parameter tensor")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_run_gradcheck)


def gradcheck_model_kind(kind: str, n_nodes: int = 12, d_features: int = 8,
                         d_hidden: int = 8, n_blocks: int = 2, d_state: int = 4,
                         pe_dim: int = 8, gin_layers: int = 1, seed: int = 0,
                         samples: int = 2) -> float:
    """Max relative gradient error for one model kind on a random graph.

    Runs in eval mode with fusion weights frozen at their base-parameter
    values, so finite differences see the same function the tape
    differentiates.
    """
    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(n_nodes))) + 2
    cells = rng.choice(side * side, size=n_nodes, replace=False)
    coords = np.stack([cells % side, cells // side], axis=1).astype(float)
    feats = rng.standard_normal((n_nodes, d_features))
    graph = build_graph(coords, feats, k=min(8, n_nodes - 1), pe_dim=pe_dim)
    cfg = ModelConfig(model_kind=kind, d_features=d_features, d_hidden=d_hidden,
                      n_blocks=n_blocks, d_state=d_state, pe_dim=pe_dim,
                      dropout=0.0, gin_layers=gin_layers, seed=seed)
    model = build_model(cfg)
    pg = prepare_graph(graph, pe_dim)
    _, traces = model.forward(pg, "eval", want_trace=True)
    alphas = [t.alpha for t in traces] if traces else None

    def f():
        logit, _ = model.forward(pg, "eval", force_alphas=alphas)
        return bce_loss(logit, 1)

    return finite_difference_check(f, model.named_params(),
                                   samples_per_param=samples, seed=seed)


def _run_gradcheck(args) -> int:
    kinds = MODEL_KINDS if args.model_kind == "all" else (args.model_kind,)
    failed = False
    for kind in kinds:
        err = gradcheck_model_kind(
            kind, n_nodes=args.n_nodes, d_features=args.d_features,
            d_hidden=args.d_hidden, n_blocks=args.n_blocks,
            d_state=args.d_state, pe_dim=args.pe_dim,
            gin_layers=args.gin_layers, seed=args.seed, samples=args.samples)
        ok = err < args.tolerance
        failed |= not ok
        print(f"{kind}: max_rel_err={err:.3e} {'PASS' if ok else 'FAIL'}")
    if failed:
        raise NumericError(f"gradient check exceeded tolerance {args.tolerance}")
    return 0


# -- benchscan ------------------------------------------------------------------

def _add_benchscan(sub):
    p = sub.add_parser("benchscan",
                       help="compare sequential vs parallel scan wall time")
    p.add_argument("--t-list", default="64,256,1024,4096",
                   help="comma-separated sequence lengths")
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--s", type=int, default=8)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional CSV output path")
    p.set_defaults(func=_run_benchscan)


def _run_benchscan(args) -> int:
    try:
        t_values = [int(t) for t in args.t_list.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --t-list: {exc}") from exc
    if not t_values or min(t_values) < 1:
        raise ConfigError("--t-list needs positive integers")
    rng = np.random.default_rng(args.seed)
    rows = []
    print("T,d,S,seq_ms,par_ms,max_abs_diff")
    for t_len in t_values:
        a = rng.uniform(0.05, 0.999, size=(t_len, args.d, args.s))
        bx = rng.standard_normal((t_len, args.d, args.s))
        seq_ms = _best_ms(sequential_scan, a, bx, args.repeats)
        par_ms = _best_ms(parallel_scan, a, bx, args.repeats)
        diff = float(np.abs(parallel_scan(a, bx) - sequential_scan(a, bx)).max())
        row = {"T": t_len, "d": args.d, "S": args.s, "seq_ms": seq_ms,
               "par_ms": par_ms, "max_abs_diff": diff}
        rows.append(row)
        print(f"{t_len},{args.d},{args.s},{seq_ms:.3f},{par_ms:.3f},{diff:.3e}")
    if args.out:
        report_mod.write_csv(args.out, rows,
                             ["T", "d", "S", "seq_ms", "par_ms", "max_abs_diff"])
        print(f"wrote {args.out}")
    return 0


def _best_ms(fn, a, bx, repeats: int) -> float:
    best = float("inf")
    for _ in range(max(repeats, 1)):
        start = time.perf_counter()
        fn(a, bx)
        best = min(best, (time.perf_counter() - start) * 1e3)
    return best


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slidemamba",
        description="dual-branch tile-graph models with entropy-weighted fusion")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_synth(sub)
    _add_build_graph(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_gradcheck(sub)
    _add_benchscan(sub)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, ShapeError, ContractError, UndefinedMetricError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
