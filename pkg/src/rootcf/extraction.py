"""Recover error values ``e_hat`` from observed variables given a known DAG.

Columns of every data matrix follow the non-diagnosis vertices in ascending
index order, the same layout as ``Scm.coords``.

Two estimators are provided. ``topdown-linear`` regresses each variable on
its parents by (ridge-stabilised) least squares and keeps the residual.
``bottomup-additive`` replaces the regression with a nonparametric smoother
(k-nearest-neighbour mean or line, or local-linear with a Gaussian bandwidth). Root
variables are their own errors and are copied through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, SingularFitError, StructuralError
from .graph import CausalGraph

MIN_NONPARAMETRIC_ROWS = 50


@dataclass(frozen=True)
class ExtractionConfig:
    mode: str = "topdown-linear"
    smoother: str = "knn"  # "knn" or "local-linear"; bottom-up only
    k: Optional[int] = None  # None selects max(10, ceil(n**0.6 / 2))
    degree: int = 0  # kNN only: 0 averages the neighbours, 1 fits a line through them
    bandwidth: float = 0.5
    ridge: float = 1e-8

    def __post_init__(self):
        if self.mode not in ("topdown-linear", "bottomup-additive"):
            raise ConfigError(f"unknown extraction mode {self.mode!r}")
        if self.smoother not in ("knn", "local-linear"):
            raise ConfigError(f"unknown smoother {self.smoother!r}")
        if self.degree not in (0, 1):
            raise ConfigError("kNN degree must be 0 or 1")
        if self.k is not None and self.k < 2:
            raise ConfigError("k must be at least 2")
        if not self.bandwidth > 0:
            raise ConfigError("bandwidth must be positive")
        if self.ridge < 0:
            raise ConfigError("ridge must be non-negative")

    def neighbours(self, n: int) -> int:
        return self.k if self.k is not None else max(10, ceil(n ** 0.6 / 2))


@dataclass
class ExtractedErrors:
    e_hat: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _coords(graph: CausalGraph):
    return [v for v in range(graph.n) if v != graph.diagnosis_index]


def _check_data(x, graph):
    x = np.asarray(x, dtype=float)
    coords = _coords(graph)
    if x.ndim != 2 or x.shape[1] != len(coords):
        raise StructuralError(f"expected an (n, {len(coords)}) data matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise StructuralError("data contains non-finite values")
    return x, coords


def _parent_columns(graph, coords):
    col = {v: j for j, v in enumerate(coords)}
    return {v: [col[u] for u in graph.parents(v)] for v in coords}


def _lstsq(A, y, ridge, name):
    """Least squares with an unpenalised intercept in column 0."""
    gram = A.T @ A
    if ridge > 0:
        penalty = np.full(A.shape[1], ridge * len(y))
        penalty[0] = 0.0
        gram = gram + np.diag(penalty)
    elif np.linalg.matrix_rank(A) < A.shape[1]:
        raise SingularFitError(name)
    try:
        return np.linalg.solve(gram, A.T @ y)
    except np.linalg.LinAlgError:
        raise SingularFitError(name) from None


def _variable_stats(resid, fitted):
    return {"residual_var": float(np.var(resid)), "fitted_var": float(np.var(fitted))}


class LinearExtractor:
    """Per-variable intercept and parent coefficients, reusable on new rows."""

    def __init__(self, graph: CausalGraph, coefs: dict):
        self.graph = graph
        self.coefs = coefs
        self._coords = _coords(graph)
        self._pcols = _parent_columns(graph, self._coords)

    def transform(self, x) -> np.ndarray:
        x, coords = _check_data(x, self.graph)
        out = np.empty_like(x)
        for j, v in enumerate(coords):
            pcols = self._pcols[v]
            if not pcols:
                out[:, j] = x[:, j]
                continue
            beta = self.coefs[v]
            out[:, j] = x[:, j] - beta[0] - x[:, pcols] @ beta[1:]
        return out


def fit_topdown_linear(x, graph: CausalGraph, cfg: ExtractionConfig = ExtractionConfig()):
    """Fit the linear residual extractor; returns ``(extractor, ExtractedErrors)``."""
    x, coords = _check_data(x, graph)
    n = x.shape[0]
    pcols = _parent_columns(graph, coords)
    coefs, diag = {}, {}
    e_hat = np.empty_like(x)
    for v in graph.order:
        if v == graph.diagnosis_index:
            continue
        j = coords.index(v)
        name = graph.name(v)
        if not pcols[v]:
            e_hat[:, j] = x[:, j]
            diag[name] = {"root": True, **_variable_stats(x[:, j], np.zeros(n))}
            continue
        if n < len(pcols[v]) + 2:
            raise StructuralError(f"{name} has {len(pcols[v])} parents but only {n} rows")
        A = np.column_stack([np.ones(n), x[:, pcols[v]]])
        beta = _lstsq(A, x[:, j], cfg.ridge, name)
        fitted = A @ beta
        e_hat[:, j] = x[:, j] - fitted
        coefs[v] = beta
        diag[name] = {"root": False, "intercept": float(beta[0]),
                      "coefficients": {graph.name(u): float(b) for u, b in zip(graph.parents(v), beta[1:])},
                      **_variable_stats(e_hat[:, j], fitted)}
    return LinearExtractor(graph, coefs), ExtractedErrors(e_hat, {"mode": "topdown-linear", "n": n,
                                                                    "ridge": cfg.ridge, "variables": diag})


def extract_topdown_linear(x, graph: CausalGraph, cfg: ExtractionConfig = ExtractionConfig()) -> ExtractedErrors:
    return fit_topdown_linear(x, graph, cfg)[1]


def extract_oracle(scm, x) -> ExtractedErrors:
    """Invert a known structural model; exact up to rounding when the model is invertible."""
    return ExtractedErrors(scm.invert(x), {"mode": "oracle"})


def _knn_index(tree: cKDTree, q: np.ndarray, k: int, n: int):
    """k nearest training rows per query, distance ties broken by ascending row index."""
    extra = min(n - k, 8)
    dist, idx = tree.query(q, k=k + extra)
    if dist.ndim == 1:
        dist, idx = dist[:, None], idx[:, None]
    order = np.lexsort((idx, dist), axis=1)
    dist = np.take_along_axis(dist, order, axis=1)
    idx = np.take_along_axis(idx, order, axis=1)
    out = idx[:, :k].copy()
    if extra:
        # a tie group running past the queried window needs the full ball
        spill = np.flatnonzero(dist[:, k - 1] == dist[:, -1])
    else:
        spill = np.array([], dtype=int)
    for r in spill:
        ball = np.asarray(tree.query_ball_point(q[r], dist[r, k - 1]), dtype=int)
        d = np.linalg.norm(tree.data[ball] - q[r], axis=1)
        out[r] = ball[np.lexsort((ball, d))][:k]
    return out


def _knn_linear(train_x, train_y, q, idx, ridge, chunk=2048):
    """Unweighted least-squares line through each query's neighbours, evaluated at the query."""
    out = np.empty(len(q))
    for start in range(0, len(q), chunk):
        sl = slice(start, start + chunk)
        nb = idx[sl]
        delta = train_x[nb] - q[sl, None, :]
        A = np.concatenate([np.ones(delta.shape[:2] + (1,)), delta], axis=2)
        gram = np.einsum("rki,rkj->rij", A, A)
        scale = np.einsum("rii->r", gram)
        diag = np.arange(1, A.shape[2])
        gram[:, diag, diag] += (ridge + 1e-10) * scale[:, None]
        rhs = np.einsum("rki,rk->ri", A, train_y[nb])
        out[sl] = np.linalg.solve(gram, rhs[..., None])[:, 0, 0]
    return out


def _local_linear(tree: cKDTree, train_x, train_y, q, h, ridge):
    out = np.empty(len(q))
    radius = 3.0 * h
    for r, point in enumerate(q):
        ball = np.asarray(tree.query_ball_point(point, radius), dtype=int)
        if ball.size == 0:
            _, nearest = tree.query(point, k=1)
            out[r] = train_y[nearest]
            continue
        delta = train_x[ball] - point
        w = np.exp(-0.5 * np.sum(delta * delta, axis=1) / (h * h))
        A = np.column_stack([np.ones(ball.size), delta])
        gram = (A * w[:, None]).T @ A
        gram[np.diag_indices_from(gram)] += ridge + 1e-12 * np.trace(gram)
        gram[0, 0] -= ridge
        beta = np.linalg.lstsq(gram, (A * w[:, None]).T @ train_y[ball], rcond=None)[0]
        out[r] = beta[0]
    return out


class AdditiveExtractor:
    """Nonparametric residual extractor; keeps the training data for new queries."""

    def __init__(self, graph: CausalGraph, cfg: ExtractionConfig, train_x: np.ndarray):
        self.graph = graph
        self.cfg = cfg
        self.train_x = train_x
        self._coords = _coords(graph)
        self._pcols = _parent_columns(graph, self._coords)
        self._trees = {v: cKDTree(train_x[:, cols]) for v, cols in self._pcols.items() if cols}
        self.k = cfg.neighbours(len(train_x))

    def fitted(self, v: int, q: np.ndarray) -> np.ndarray:
        j = self._coords.index(v)
        y = self.train_x[:, j]
        tree = self._trees[v]
        if self.cfg.smoother == "knn":
            idx = _knn_index(tree, q, self.k, len(y))
            if self.cfg.degree == 0:
                return y[idx].mean(axis=1)
            return _knn_linear(tree.data, y, q, idx, self.cfg.ridge)
        return _local_linear(tree, tree.data, y, q, self.cfg.bandwidth, self.cfg.ridge)

    def transform(self, x) -> np.ndarray:
        x, coords = _check_data(x, self.graph)
        out = np.empty_like(x)
        for j, v in enumerate(coords):
            cols = self._pcols[v]
            out[:, j] = x[:, j] if not cols else x[:, j] - self.fitted(v, x[:, cols])
        return out


def fit_bottomup_additive(x, graph: CausalGraph, cfg: ExtractionConfig = ExtractionConfig(mode="bottomup-additive")):
    """Fit the nonparametric extractor; returns ``(extractor, ExtractedErrors)``."""
    x, coords = _check_data(x, graph)
    n = x.shape[0]
    if n < MIN_NONPARAMETRIC_ROWS:
        raise StructuralError(f"nonparametric extraction needs at least {MIN_NONPARAMETRIC_ROWS} rows, got {n}")
    k = cfg.neighbours(n)
    if cfg.smoother == "knn" and k > n:
        raise ConfigError(f"k={k} exceeds the {n} available rows")
    ext = AdditiveExtractor(graph, cfg, x)
    e_hat = np.empty_like(x)
    diag = {}
    for v in reversed(graph.order):
        if v == graph.diagnosis_index:
            continue
        j = coords.index(v)
        cols = ext._pcols[v]
        if not cols:
            e_hat[:, j] = x[:, j]
            diag[graph.name(v)] = {"root": True, **_variable_stats(x[:, j], np.zeros(n))}
            continue
        fitted = ext.fitted(v, x[:, cols])
        e_hat[:, j] = x[:, j] - fitted
        diag[graph.name(v)] = {"root": False, **_variable_stats(e_hat[:, j], fitted)}
    smoother = {"kind": "knn", "k": k, "degree": cfg.degree} if cfg.smoother == "knn" else {"kind": "local-linear", "bandwidth": cfg.bandwidth}
    return ext, ExtractedErrors(e_hat, {"mode": "bottomup-additive", "n": n, "smoother": smoother, "variables": diag})


def extract_bottomup_additive(x, graph: CausalGraph,
                              cfg: ExtractionConfig = ExtractionConfig(mode="bottomup-additive")) -> ExtractedErrors:
    return fit_bottomup_additive(x, graph, cfg)[1]


def fit_extractor(x, graph: CausalGraph, cfg: ExtractionConfig):
    if cfg.mode == "topdown-linear":
        return fit_topdown_linear(x, graph, cfg)
    return fit_bottomup_additive(x, graph, cfg)


def extract(x, graph: CausalGraph, cfg: ExtractionConfig) -> ExtractedErrors:
    return fit_extractor(x, graph, cfg)[1]


def rmse(e_hat, e) -> np.ndarray:
    """Per-column root mean squared error."""
    diff = np.asarray(e_hat, dtype=float) - np.asarray(e, dtype=float)
    return np.sqrt(np.mean(diff * diff, axis=0))
