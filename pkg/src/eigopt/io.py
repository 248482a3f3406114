"""File formats: mesh documents, density and map CSVs, JSON reports."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .mesh import DensityPair, Mesh, MeshError

__all__ = [
    "dump_json",
    "write_json",
    "read_json",
    "mesh_to_dict",
    "mesh_from_dict",
    "write_mesh",
    "read_mesh",
    "write_column",
    "read_column",
    "write_densities",
    "read_densities",
    "write_matrix",
    "read_matrix",
    "write_rows",
]


def _clean(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dump_json(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def mesh_to_dict(mesh: Mesh) -> dict:
    doc = {
        "dimension": mesh.dimension,
        "vertices": mesh.vertices.tolist(),
        "simplices": mesh.simplices.tolist(),
    }
    if mesh.periods is not None:
        doc["periods"] = mesh.periods.tolist()
        doc["coords"] = mesh.coords.tolist()
    return doc


_MESH_KEYS = {"dimension", "vertices", "simplices", "periods", "coords"}


def mesh_from_dict(doc: dict) -> Mesh:
    if not isinstance(doc, dict):
        raise MeshError("mesh document must be a mapping")
    unknown = set(doc) - _MESH_KEYS
    if unknown:
        raise MeshError("unknown mesh fields: %s" % ", ".join(sorted(unknown)))
    for key in ("dimension", "vertices", "simplices"):
        if key not in doc:
            raise MeshError("mesh document lacks '%s'" % key)
    try:
        vertices = np.asarray(doc["vertices"], dtype=float)
        simplices = np.asarray(doc["simplices"], dtype=np.int64)
    except (TypeError, ValueError) as exc:
        raise MeshError("malformed mesh arrays: %s" % exc) from None
    coords = doc.get("coords")
    periods = doc.get("periods")
    return Mesh(int(doc["dimension"]), vertices, simplices,
                coords=None if coords is None else np.asarray(coords, dtype=float),
                periods=None if periods is None else np.asarray(periods, dtype=float))


def write_mesh(path, mesh: Mesh) -> None:
    Path(path).write_text(json.dumps(mesh_to_dict(mesh)) + "\n")


def read_mesh(path) -> Mesh:
    try:
        doc = read_json(path)
    except json.JSONDecodeError as exc:
        raise MeshError("mesh file is not valid JSON: %s" % exc) from None
    return mesh_from_dict(doc)


def write_column(path, values, name: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([name])
        for v in np.asarray(values, dtype=float):
            w.writerow([repr(float(v))])


def read_column(path) -> np.ndarray:
    rows = read_matrix(path)
    if rows.ndim != 2 or rows.shape[1] != 1:
        raise ValueError("%s: expected a single column" % path)
    return rows[:, 0]


def write_densities(directory, pair: DensityPair) -> None:
    d = Path(directory)
    write_column(d / "alpha.csv", pair.alpha, "alpha")
    write_column(d / "mu.csv", pair.mu, "mu")


def read_densities(alpha_path, mu_path, mesh: Mesh | None = None) -> DensityPair:
    pair = DensityPair(read_column(alpha_path), read_column(mu_path))
    if mesh is not None:
        pair.validate(mesh)
    return pair


def write_matrix(path, X, header) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for row in X:
            w.writerow([repr(float(v)) for v in row])


def read_matrix(path) -> np.ndarray:
    """Numeric CSV with an optional header row."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError("%s: empty file" % path)
    try:
        [float(x) for x in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        data = np.array([[float(x) for x in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ValueError("%s: non-numeric entry (%s)" % (path, exc)) from None
    if data.size == 0:
        raise ValueError("%s: no data rows" % path)
    return data


def write_rows(path, rows: list, columns: list) -> None:
    """CSV of dict rows; floats written with repr for exact round trips."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            out = []
            for c in columns:
                v = r[c]
                if isinstance(v, (float, np.floating)):
                    v = repr(float(v))
                elif isinstance(v, (np.bool_, bool)):
                    v = str(bool(v)).lower()
                out.append(v)
            w.writerow(out)
