"""File formats: points/diagram JSON, loss CSV, seeded site generation.

Floats are always written with 17 significant digits (``%.16e``) so every
value round-trips exactly and files are byte-stable across runs.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .voronoi import Boundary, DiagramSnapshot

__all__ = [
    "format_float",
    "dumps_json",
    "write_json",
    "write_csv",
    "rng_for_seed",
    "uniform_points",
    "load_points",
    "snapshot_to_dict",
    "snapshot_from_dict",
    "load_diagram",
]


def format_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"refusing to serialise non-finite value {x!r}")
    return "%.16e" % x


def _dump(obj, out: list, indent: int, level: int) -> None:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if obj is None or isinstance(obj, bool):
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _dump(obj.tolist(), out, indent, level)
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for k, (key, val) in enumerate(obj.items()):
            if k:
                out.append(",")
            out.append(pad + json.dumps(str(key)) + ": ")
            _dump(val, out, indent, level + 1)
        out.append(end + "}")
    elif isinstance(obj, (list, tuple)):
        # numeric rows stay on one line
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            out.append("[")
            out.append(", ".join(
                format_float(v) if isinstance(v, (float, np.floating)) else str(int(v)) for v in obj
            ))
            out.append("]")
            return
        if not obj:
            out.append("[]")
            return
        out.append("[")
        for k, val in enumerate(obj):
            if k:
                out.append(",")
            out.append(pad)
            _dump(val, out, indent, level + 1)
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps_json(obj, indent: int = 1) -> str:
    out: list[str] = []
    _dump(obj, out, indent, 0)
    return "".join(out) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps_json(obj), encoding="utf-8")
    return path


def write_csv(path, header, rows) -> Path:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            format_float(v) if isinstance(v, (float, np.floating)) else str(v) for v in row
        ))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def rng_for_seed(seed: int) -> np.random.Generator:
    """numpy ``Generator`` over PCG64 (O'Neill's PCG XSL-RR 128/64)."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def uniform_points(n: int, seed: int, boundary: Optional[Boundary] = None,
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """``n`` uniform points, strictly inside ``boundary`` when given
    (otherwise in the unit square)."""
    rng = rng_for_seed(seed) if rng is None else rng
    if boundary is None:
        return rng.random((n, 2))
    lo = boundary.vertices.min(axis=0)
    hi = boundary.vertices.max(axis=0)
    out = np.empty((0, 2))
    while len(out) < n:
        cand = lo + (hi - lo) * rng.random((2 * (n - len(out)) + 8, 2))
        cand = cand[boundary.contains(cand, strict=True)]
        out = np.vstack([out, cand])
    return out[:n]


def load_points(path) -> np.ndarray:
    """Read ``{"points": [[x, y], ...]}`` or a diagram file's ``sites``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        pts = data.get("points", data.get("sites"))
    else:
        pts = data
    if pts is None:
        raise ValueError(f"{path}: no 'points' or 'sites' array")
    arr = np.array(pts, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{path}: points must be a list of [x, y] pairs")
    return arr


def snapshot_to_dict(snap: DiagramSnapshot) -> dict:
    cells = []
    for i, poly in enumerate(snap.cells):
        cells.append({
            "site": i,
            "unbounded": bool(snap.unbounded[i]),
            "area": float(snap.areas[i]),
            "vertices": [list(map(float, v)) for v in poly],
        })
    lengths = snap.edge_lengths
    edges = []
    for k in range(len(snap.edges)):
        edges.append({
            "sites": [int(s) for s in snap.edge_sites[k]],
            "border": bool(snap.edge_border[k]),
            "endpoints": [list(map(float, snap.edges[k, :2])), list(map(float, snap.edges[k, 2:]))],
            "length": float(lengths[k]),
        })
    return {
        "sites": [list(map(float, p)) for p in snap.sites],
        "boundary": None if snap.boundary is None else [list(map(float, p)) for p in snap.boundary],
        "total_area": float(math.fsum(snap.areas)),
        "cells": cells,
        "edges": edges,
    }


def snapshot_from_dict(data: dict) -> DiagramSnapshot:
    cells = data["cells"]
    edges = data["edges"]
    return DiagramSnapshot(
        sites=np.array(data["sites"], dtype=float).reshape(-1, 2),
        cells=[np.array(c["vertices"], dtype=float).reshape(-1, 2) for c in cells],
        areas=np.array([c["area"] for c in cells], dtype=float),
        unbounded=np.array([c["unbounded"] for c in cells], dtype=bool),
        edges=np.array([e["endpoints"][0] + e["endpoints"][1] for e in edges], dtype=float).reshape(-1, 4),
        edge_sites=np.array([e["sites"] for e in edges], dtype=np.int64).reshape(-1, 2),
        edge_border=np.array([e["border"] for e in edges], dtype=bool),
        boundary=None if data.get("boundary") is None else np.array(data["boundary"], dtype=float),
    )


def load_diagram(path) -> DiagramSnapshot:
    return snapshot_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
