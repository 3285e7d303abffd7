"""Checkpoint serialization.

A checkpoint is a single JSON document mapping dotted parameter names to
{"shape": [...], "values": [row-major floats]}. Reserved keys: "__adam__"
for optimizer state and "__config__" for the model configuration. Floats
are written with Python's shortest round-trip repr, so reloading is exact.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import DataError, ShapeError

RESERVED = ("__adam__", "__config__")


def save_checkpoint(path, params, buffers=None, config: dict | None = None,
                    adam_state: dict | None = None):
    """Write params (name -> Tensor) and buffers (name -> ndarray) to JSON."""
    doc = {}
    for name, p in params.items():
        doc[name] = {"shape": list(p.data.shape),
                     "values": p.data.reshape(-1).tolist()}
    for name, arr in (buffers or {}).items():
        arr = np.asarray(arr, dtype=np.float64)
        doc[name] = {"shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
    if config is not None:
        doc["__config__"] = config
    if adam_state is not None:
        doc["__adam__"] = adam_state
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path):
    """Read a checkpoint; returns (entries, config, adam_state).

    ``entries`` maps each parameter/buffer name to a float64 ndarray.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError(f"checkpoint {path}: top level must be an object")
    entries = {}
    for name, entry in doc.items():
        if name in RESERVED:
            continue
        if not isinstance(entry, dict) or "shape" not in entry or "values" not in entry:
            raise DataError(f"checkpoint entry '{name}' missing shape/values")
        arr = np.asarray(entry["values"], dtype=np.float64)
        shape = tuple(int(s) for s in entry["shape"])
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise DataError(f"checkpoint entry '{name}': {arr.size} values for shape {shape}")
        entries[name] = arr.reshape(shape)
    return entries, doc.get("__config__"), doc.get("__adam__")


def apply_entries(entries: dict, params: dict, buffer_specs) -> None:
    """Load checkpoint arrays into live parameters and buffers by name."""
    consumed = set()
    for name, p in params.items():
        if name not in entries:
            raise ShapeError(f"checkpoint missing parameter '{name}'")
        arr = entries[name]
        if arr.shape != p.data.shape:
            raise ShapeError(f"checkpoint shape {arr.shape} != expected "
                             f"{p.data.shape} for '{name}'")
        p.data = arr.copy()
        consumed.add(name)
    for name, owner, attr in buffer_specs:
        if name not in entries:
            raise ShapeError(f"checkpoint missing buffer '{name}'")
        current = getattr(owner, attr)
        arr = entries[name]
        if arr.shape != np.asarray(current).shape:
            raise ShapeError(f"checkpoint shape {arr.shape} != expected "
                             f"{np.asarray(current).shape} for '{name}'")
        setattr(owner, attr, arr.copy())
        consumed.add(name)
    unknown = set(entries) - consumed
    if unknown:
        raise ShapeError(f"checkpoint has unknown entries: {sorted(unknown)[:5]}")
