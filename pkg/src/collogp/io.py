"""File formats: dataset CSVs, metrics JSON, model snapshots, config hashing.

CSV files start with a `# config_hash=...` comment line (when provenance is
known) followed by a header row. metrics.json / summary.json are written
with sorted keys so byte-identical reruns are byte-identical files.
"""

import hashlib
import json
import pickle
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, SchemaError

MODEL_FORMAT_VERSION = 1
PACKAGE_VERSION = "0.1.0"


def config_hash(config):
    """Stable hash of a config mapping: sha256 of its canonical JSON form."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_csv(path, columns, arrays, cfg_hash=None):
    arrays = [np.asarray(a, dtype=float).ravel() for a in arrays]
    n = arrays[0].size
    if any(a.size != n for a in arrays):
        raise DimensionMismatch("column lengths differ")
    with open(path, "w") as fh:
        if cfg_hash:
            fh.write(f"# config_hash={cfg_hash}\n")
        fh.write(",".join(columns) + "\n")
        for i in range(n):
            fh.write(",".join(repr(float(a[i])) for a in arrays) + "\n")


def read_csv(path):
    """Returns (columns, data (n, k), cfg_hash or None)."""
    cfg_hash = None
    with open(path) as fh:
        line = fh.readline()
        if line.startswith("# config_hash="):
            cfg_hash = line.strip().split("=", 1)[1]
            line = fh.readline()
        columns = [c.strip() for c in line.strip().split(",")]
        rows = [list(map(float, ln.split(","))) for ln in fh if ln.strip()]
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(columns))
    return columns, data, cfg_hash


def write_dataset(path, X, y=None, cfg_hash=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cols = [f"x{i}" for i in range(X.shape[1])]
    arrays = [X[:, i] for i in range(X.shape[1])]
    if y is not None:
        cols.append("y")
        arrays.append(y)
    write_csv(path, cols, arrays, cfg_hash)


def read_dataset(path, with_y=True):
    cols, data, cfg_hash = read_csv(path)
    if with_y:
        if cols[-1] != "y":
            raise SchemaError(str(path), "expected last column 'y'")
        return data[:, :-1], data[:, -1], cfg_hash
    return data, None, cfg_hash


def read_solution_grid(path):
    """External grid file: CSV with header t,x,u, row-major rectangular grid."""
    from .simulate import GridSolution

    cols, data, _ = read_csv(path)
    if cols != ["t", "x", "u"]:
        raise SchemaError(str(path), "expected header 't,x,u'")
    t = np.unique(data[:, 0])
    x = np.unique(data[:, 1])
    if t.size * x.size != data.shape[0]:
        raise SchemaError(str(path), "rows do not form a rectangular grid")
    order = np.lexsort((data[:, 1], data[:, 0]))
    u = data[order, 2].reshape(t.size, x.size)
    return GridSolution(t=t, x=x, u=u)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, default=float)
        fh.write("\n")


def save_model(path, payload):
    payload = dict(payload)
    payload["format_version"] = MODEL_FORMAT_VERSION
    payload["package_version"] = PACKAGE_VERSION
    with open(path, "wb") as fh:
        pickle.dump(payload, fh)


def load_model(path):
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise SchemaError(str(path), f"model format {payload.get('format_version')} "
                          f"incompatible with version {MODEL_FORMAT_VERSION}")
    return payload
