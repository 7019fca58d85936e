"""File formats: CSV matrices, canonical JSON, graphs and run configuration."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, StructuralError
from .graph import CausalGraph

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _clean(obj):
    """Make ``obj`` JSON-ready: numpy scalars to Python, non-finite floats to ``None``."""
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj, indent=2) -> str:
    """Canonical JSON: sorted keys, no NaN, trailing newline."""
    return json.dumps(_clean(obj), sort_keys=True, indent=indent, allow_nan=False) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj), encoding="utf-8")


def write_jsonl(path, objs):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obj in objs:
            fh.write(dumps(obj, indent=None))


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 2 ** 53:
        return str(int(v))
    return repr(float(v))


def write_csv(path, header: Sequence[str], columns: Sequence):
    """Write equal-length columns under ``header``; numbers in shortest round-trip form."""
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0]) if cols else 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        for i in range(n):
            w.writerow([c[i] if c.dtype.kind in "OUS" else _fmt(c[i]) for c in cols])


def read_csv(path):
    """Return ``(header, matrix)`` for a numeric CSV with a mandatory header row."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise ConfigError(f"{path}: duplicate column names")
    body = [r for r in rows[1:] if r]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from None
    if body and any(len(r) != len(header) for r in body):
        raise ConfigError(f"{path}: ragged rows")
    return header, data.reshape(len(body), len(header))


def graph_from_dict(d: Mapping) -> CausalGraph:
    """Graph from ``{"variables": [...], "edges": [[a, b], ...], "diagnosis": name}``; a model file also works."""
    try:
        names = list(d["variables"])
        pos = {name: i for i, name in enumerate(names)}
        edges = [(pos[a], pos[b]) for a, b in d.get("edges", [])]
        diag = d.get("diagnosis")
        diag = pos[diag] if diag is not None else None
    except KeyError as exc:
        raise StructuralError(f"graph file refers to unknown variable or key {exc.args[0]!r}") from None
    return CausalGraph(len(names), edges, labels=names, diagnosis_index=diag)


def graph_to_dict(graph: CausalGraph) -> dict:
    names = [graph.name(v) for v in range(graph.n)]
    return {
        "variables": names,
        "edges": [[names[u], names[v]] for u, v in sorted(graph.edges)],
        "diagnosis": None if graph.diagnosis_index is None else names[graph.diagnosis_index],
    }


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_hash(cfg: Mapping) -> str:
    """SHA-256 of the canonical JSON form of a resolved configuration."""
    return hashlib.sha256(dumps(cfg, indent=None).encode()).hexdigest()
