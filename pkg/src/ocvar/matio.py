"""Matrix and tensor persistence: CSV payload plus JSON sidecar metadata.

A matrix lives in a plain numeric CSV; everything one needs to interpret it
(shape, slot counts, method, provenance hash) goes in `<path>.json` next to
it.  Tensors use the same layout on their matricized form.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import SchemaError


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_matrix(path, matrix: np.ndarray, meta: Optional[dict] = None) -> Path:
    path = Path(path)
    mat = np.atleast_2d(np.asarray(matrix, dtype=float))
    np.savetxt(path, mat, delimiter=",", fmt="%.17g")
    payload = {"shape": list(mat.shape)}
    payload.update(meta or {})
    sidecar_path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def load_matrix(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"matrix file not found: {path}")
    mat = np.loadtxt(path, delimiter=",", ndmin=2)
    meta: dict = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        shape = meta.get("shape")
        if shape is not None and list(mat.shape) != list(shape):
            raise SchemaError(f"matrix shape {mat.shape} != sidecar shape {shape}")
    return mat, meta


def save_tensor(path, bmat: np.ndarray, kn: int, mode: str, draws=None, extra=None) -> Path:
    meta = {"kind": "moment_tensor", "kn": kn, "mode": mode, "draws": draws}
    meta.update(extra or {})
    return save_matrix(path, bmat, meta)


def load_tensor(path) -> tuple[np.ndarray, dict]:
    mat, meta = load_matrix(path)
    if not meta:
        raise SchemaError(f"tensor {path} has no sidecar; kn is required to interpret it")
    if meta.get("kind") not in (None, "moment_tensor"):
        raise SchemaError(f"{path} is not a moment tensor export")
    kn = meta.get("kn")
    if kn is None:
        raise SchemaError(f"tensor sidecar for {path} lacks kn")
    if mat.shape != (kn * kn, kn * kn):
        raise SchemaError(f"tensor shape {mat.shape} inconsistent with kn={kn}")
    return mat, meta
