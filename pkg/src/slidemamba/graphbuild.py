"""Tile-graph construction: k-NN connectivity over tile coordinates,
cosine/Euclidean edge features, 2-D sinusoidal positional encodings, and
JSON serialization of graphs and dataset manifests.

Feature extraction from slide images is out of scope; this module ingests
pre-extracted per-tile feature rows (CSV) or ready-made graph files.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError

GRAPH_FIELDS = ("slide_id", "label", "n_nodes", "coords", "node_features",
                "pos_enc", "edges", "edge_features")


@dataclass
class TileGraph:
    """One slide as a graph: nodes are tiles, edges are k-NN pairs."""

    slide_id: str
    label: int
    coords: np.ndarray          # (n, 2) grid indices
    node_features: np.ndarray   # (n, d)
    pos_enc: np.ndarray         # (n, N)
    edges: np.ndarray           # (E, 2) directed, symmetric as a set
    edge_features: np.ndarray   # (E, 2) [cosine_similarity, euclidean_distance]

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]


def sinusoidal_pe(coord, n_dims: int) -> np.ndarray:
    """Positional encoding of a 2-D grid coordinate.

    The first half of the vector encodes x, the second half y; within each
    half sin/cos alternate over n_dims/4 frequencies 10000^(-4i/n_dims).
    """
    if n_dims < 4 or n_dims % 4 != 0:
        raise ConfigError(f"positional encoding size must be a multiple of 4, got {n_dims}")
    x, y = float(coord[0]), float(coord[1])
    n_freq = n_dims // 4
    freqs = 10000.0 ** (-4.0 * np.arange(n_freq) / n_dims)
    out = np.empty(n_dims)
    for half, value in ((0, x), (1, y)):
        base = half * (n_dims // 2)
        out[base + 0:base + n_dims // 2:2] = np.sin(value * freqs)
        out[base + 1:base + n_dims // 2:2] = np.cos(value * freqs)
    return out


def positional_encodings(coords: np.ndarray, n_dims: int) -> np.ndarray:
    return np.stack([sinusoidal_pe(c, n_dims) for c in np.asarray(coords, dtype=np.float64)])


def knn_edges(coords, k: int) -> np.ndarray:
    """Symmetric directed edge list of each node's k nearest neighbors.

    Distance ties break toward the lower node index. The returned list is
    the union of directed k-NN edges with their reverses, sorted by
    (source, destination); no self-loops.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if n < 1:
        raise ShapeError("knn_edges needs at least one node")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if n == 1:
        return np.empty((0, 2), dtype=np.intp)
    diff = coords[:, None, :] - coords[None, :, :]
    d2 = (diff * diff).sum(axis=-1)
    np.fill_diagonal(d2, np.inf)
    idx = np.broadcast_to(np.arange(n), (n, n))
    order = np.lexsort((idx, d2), axis=-1)
    kk = min(k, n - 1)
    nearest = order[:, :kk]
    src = np.repeat(np.arange(n), kk)
    dst = nearest.reshape(-1)
    pairs = {(int(u), int(v)) for u, v in zip(src, dst)}
    pairs |= {(v, u) for u, v in pairs}
    out = np.array(sorted(pairs), dtype=np.intp).reshape(-1, 2)
    return out


def edge_features(u_feat, v_feat, u_coord, v_coord) -> np.ndarray:
    """[cosine similarity of features, Euclidean distance of coordinates]."""
    u_feat = np.asarray(u_feat, dtype=np.float64)
    v_feat = np.asarray(v_feat, dtype=np.float64)
    if u_feat.shape != v_feat.shape:
        raise ShapeError(f"feature lengths differ: {u_feat.shape} vs {v_feat.shape}")
    nu = np.linalg.norm(u_feat)
    nv = np.linalg.norm(v_feat)
    if nu == 0.0 or nv == 0.0:
        cos = 0.0  # blank tile: similarity defined as 0 to avoid NaN
    else:
        cos = float(np.clip(np.dot(u_feat, v_feat) / (nu * nv), -1.0, 1.0))
    dist = float(np.linalg.norm(np.asarray(u_coord, dtype=np.float64)
                                - np.asarray(v_coord, dtype=np.float64)))
    return np.array([cos, dist])


def _edge_feature_matrix(coords, feats, edges) -> np.ndarray:
    if edges.shape[0] == 0:
        return np.empty((0, 2))
    u, v = edges[:, 0], edges[:, 1]
    norms = np.linalg.norm(feats, axis=1)
    denom = norms[u] * norms[v]
    dots = np.einsum("ij,ij->i", feats[u], feats[v])
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0.0, dots / np.where(denom > 0.0, denom, 1.0), 0.0)
    cos = np.clip(cos, -1.0, 1.0)
    dist = np.linalg.norm(coords[u] - coords[v], axis=1)
    return np.stack([cos, dist], axis=1)


def build_graph(coords, node_features, k: int = 8, pe_dim: int = 16,
                label: int = 0, slide_id: str = "slide") -> TileGraph:
    """Assemble a TileGraph from row-aligned coordinates and features."""
    coords = np.asarray(coords, dtype=np.float64)
    node_features = np.asarray(node_features, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError(f"coords must be n x 2, got {coords.shape}")
    if node_features.shape[0] != coords.shape[0]:
        raise ShapeError(f"{coords.shape[0]} coords vs {node_features.shape[0]} feature rows")
    edges = knn_edges(coords, k)
    graph = TileGraph(
        slide_id=slide_id,
        label=int(label),
        coords=coords,
        node_features=node_features,
        pos_enc=positional_encodings(coords, pe_dim),
        edges=edges,
        edge_features=_edge_feature_matrix(coords, node_features, edges),
    )
    validate_graph(graph)
    return graph


def raster_order(coords) -> np.ndarray:
    """Node permutation in row-major raster order: by y, then x, then index."""
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    return np.lexsort((np.arange(n), coords[:, 0], coords[:, 1]))


def validate_graph(g: TileGraph, source: str = "graph"):
    """Enforce every TileGraph invariant; raises DataError naming the field."""
    n = g.coords.shape[0]
    for field, width in (("coords", 2), ("edge_features", 2)):
        arr = getattr(g, field)
        if arr.ndim != 2 or (arr.size and arr.shape[1] != width):
            raise DataError(f"{source}: field '{field}' must be n x {width}")
    for field in ("node_features", "pos_enc"):
        arr = getattr(g, field)
        if arr.ndim != 2 or arr.shape[0] != n:
            raise DataError(f"{source}: field '{field}' not row-aligned with coords")
    if g.label not in (0, 1):
        raise DataError(f"{source}: field 'label' must be 0 or 1, got {g.label}")
    e = g.edges
    if e.size:
        if e.min() < 0 or e.max() >= n:
            raise DataError(f"{source}: field 'edges' has an endpoint out of range")
        if (e[:, 0] == e[:, 1]).any():
            raise DataError(f"{source}: field 'edges' contains a self-loop")
        pairs = {(int(u), int(v)) for u, v in e}
        if len(pairs) != e.shape[0]:
            raise DataError(f"{source}: field 'edges' contains duplicates")
        if pairs != {(v, u) for u, v in pairs}:
            raise DataError(f"{source}: field 'edges' is not symmetric")
    if g.edge_features.shape[0] != e.shape[0]:
        raise DataError(f"{source}: field 'edge_features' not aligned with edges")
    if g.edge_features.size:
        cos = g.edge_features[:, 0]
        if cos.min() < -1.0 or cos.max() > 1.0:
            raise DataError(f"{source}: field 'edge_features' cosine outside [-1, 1]")
        if g.edge_features[:, 1].min() < 0.0:
            raise DataError(f"{source}: field 'edge_features' negative distance")
    if g.pos_enc.size and (np.abs(g.pos_enc) > 1.0 + 1e-12).any():
        raise DataError(f"{source}: field 'pos_enc' outside [-1, 1]")


def save_graph(path, g: TileGraph):
    doc = {
        "slide_id": g.slide_id,
        "label": int(g.label),
        "n_nodes": int(g.n_nodes),
        "coords": g.coords.tolist(),
        "node_features": g.node_features.tolist(),
        "pos_enc": g.pos_enc.tolist(),
        "edges": g.edges.tolist(),
        "edge_features": g.edge_features.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_graph(path) -> TileGraph:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read graph {path}: {exc}") from exc
    for field in GRAPH_FIELDS:
        if field not in doc:
            raise DataError(f"{path}: missing field '{field}'")
    n = int(doc["n_nodes"])
    try:
        g = TileGraph(
            slide_id=str(doc["slide_id"]),
            label=int(doc["label"]),
            coords=np.asarray(doc["coords"], dtype=np.float64).reshape(n, 2),
            node_features=np.asarray(doc["node_features"], dtype=np.float64).reshape(n, -1),
            pos_enc=np.asarray(doc["pos_enc"], dtype=np.float64).reshape(n, -1),
            edges=np.asarray(doc["edges"], dtype=np.intp).reshape(-1, 2),
            edge_features=np.asarray(doc["edge_features"], dtype=np.float64).reshape(-1, 2),
        )
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: malformed field ({exc})") from exc
    validate_graph(g, source=str(path))
    return g


def load_feature_csv(path):
    """Read `tile_x,tile_y,f0,...` rows; returns (coords, features)."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}: empty feature file")
            expected = ["tile_x", "tile_y"] + [f"f{i}" for i in range(len(header) - 2)]
            if [h.strip() for h in header] != expected:
                raise DataError(f"{path}: header must be tile_x,tile_y,f0,...  got {header[:4]}")
            rows = [[float(cell) for cell in row] for row in reader if row]
    except OSError as exc:
        raise DataError(f"cannot read features {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric cell: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    return arr[:, :2], arr[:, 2:]


def save_manifest(path, records: list[dict]):
    with open(path, "w") as fh:
        json.dump(records, fh, sort_keys=True, separators=(",", ":"))


def load_manifest(path) -> list[dict]:
    """Dataset manifest: JSON list of {graph_path, label, fold_hint?}.

    Relative graph paths resolve against the manifest's directory.
    """
    try:
        with open(path) as fh:
            records = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(records, list):
        raise DataError(f"{path}: manifest must be a JSON list")
    base = os.path.dirname(os.path.abspath(path))
    out = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or "graph_path" not in rec or "label" not in rec:
            raise DataError(f"{path}: manifest entry {i} needs graph_path and label")
        gp = rec["graph_path"]
        if not os.path.isabs(gp):
            gp = os.path.join(base, gp)
        entry = {"graph_path": gp, "label": int(rec["label"])}
        if "fold_hint" in rec and rec["fold_hint"] is not None:
            entry["fold_hint"] = int(rec["fold_hint"])
        out.append(entry)
    return out
