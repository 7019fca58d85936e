"""Structural equation models: mechanisms, error distributions, sampling and inversion.

An :class:`Scm` holds one mechanism per graph vertex. Every non-diagnosis
vertex ``X_i`` is driven by its own error term ``E_i``; the error vector is
indexed by *coordinate*, i.e. by position among the non-diagnosis vertices in
ascending vertex order (``Scm.coords``). The diagnosis vertex carries a label
mechanism giving ``P(D=1 | Pa(D))`` and its own noise stays inside that
mechanism, so it never appears in error vectors.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import StructuralError, UnsupportedModelError
from .graph import CausalGraph

ROOT = "root"
LINEAR = "linear"
ADDITIVE = "additive-tabular"
LOGISTIC_LABEL = "logistic-label"
TABLE_LABEL = "table-label"

X_KINDS = (ROOT, LINEAR, ADDITIVE)
LABEL_KINDS = (LOGISTIC_LABEL, TABLE_LABEL)

_PRIMITIVES = {
    # name: (number of coefficients, evaluator)
    "affine": (2, lambda c, x: c[0] * x + c[1]),
    "tanh": (2, lambda c, x: c[0] * np.tanh(c[1] * x)),
    "quadratic": (1, lambda c, x: c[0] * x * x),
}


# --------------------------------------------------------------------------
# error distributions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorDistribution:
    """Marginal law of one error term.

    ``kind`` is one of ``uniform`` (a, b), ``laplace`` (mu, b),
    ``gaussian`` (mu, sigma) or ``discrete`` (``values``, ``probs``).
    """

    kind: str
    params: tuple = ()
    values: tuple = ()
    probs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(v) for v in self.probs))
        if self.kind == "discrete":
            if not self.values:
                raise StructuralError("discrete error distribution needs a non-empty support")
            if len(self.values) != len(self.probs):
                raise StructuralError("support and probability lengths differ")
            if len(set(self.values)) != len(self.values):
                raise StructuralError("discrete support values must be distinct")
            if any(q < 0 for q in self.probs) or abs(sum(self.probs) - 1.0) > 1e-12:
                raise StructuralError("discrete probabilities must be non-negative and sum to 1")
        elif self.kind in ("uniform", "laplace", "gaussian"):
            if len(self.params) != 2:
                raise StructuralError(f"{self.kind} takes two parameters")
            a, b = self.params
            if self.kind == "uniform" and not a < b:
                raise StructuralError("uniform(a, b) needs a < b")
            if self.kind != "uniform" and not b > 0:
                raise StructuralError(f"{self.kind} scale must be positive")
        else:
            raise StructuralError(f"unknown error distribution kind {self.kind!r}")

    @classmethod
    def uniform(cls, a=-1.0, b=1.0):
        return cls("uniform", (a, b))

    @classmethod
    def laplace(cls, mu=0.0, b=1.0):
        return cls("laplace", (mu, b))

    @classmethod
    def gaussian(cls, mu=0.0, sigma=1.0):
        return cls("gaussian", (mu, sigma))

    @classmethod
    def discrete(cls, values, probs):
        return cls("discrete", values=tuple(values), probs=tuple(probs))

    @classmethod
    def bernoulli(cls, prob_one):
        return cls.discrete((0.0, 1.0), (1.0 - prob_one, prob_one))

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    def support(self):
        """Support values and probabilities (renormalised) of a discrete law."""
        if not self.is_discrete:
            raise UnsupportedModelError(f"{self.kind} distribution has no finite support")
        cached = self.__dict__.get("_support")
        if cached is None:
            probs = np.asarray(self.probs)
            cached = (np.asarray(self.values), probs / probs.sum())
            self.__dict__["_support"] = cached
        return cached

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.params[0], self.params[1], size)
        if self.kind == "laplace":
            return rng.laplace(self.params[0], self.params[1], size)
        if self.kind == "gaussian":
            return rng.normal(self.params[0], self.params[1], size)
        values, probs = self.support()
        return values[rng.choice(len(values), size=size, p=probs)]

    @property
    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.params[0] + self.params[1])
        if self.kind in ("laplace", "gaussian"):
            return self.params[0]
        values, probs = self.support()
        return float(values @ probs)

    @property
    def var(self) -> float:
        if self.kind == "uniform":
            return (self.params[1] - self.params[0]) ** 2 / 12.0
        if self.kind == "laplace":
            return 2.0 * self.params[1] ** 2
        if self.kind == "gaussian":
            return self.params[1] ** 2
        values, probs = self.support()
        return float(((values - self.mean) ** 2) @ probs)

    @property
    def std(self) -> float:
        return float(np.sqrt(self.var))

    def to_dict(self) -> dict:
        if self.is_discrete:
            return {"kind": "discrete", "values": list(self.values), "probs": list(self.probs)}
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ErrorDistribution":
        if d["kind"] == "discrete":
            return cls.discrete(d["values"], d["probs"])
        return cls(d["kind"], tuple(d["params"]))


# --------------------------------------------------------------------------
# mechanisms
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Term:
    """One summand ``fn(coeffs; parent)`` of an additive mechanism.

    ``parent`` is the position of the parent in the (ascending) parent list.
    """

    fn: str
    parent: int
    coeffs: tuple

    def __post_init__(self):
        if self.fn not in _PRIMITIVES:
            raise StructuralError(f"unknown additive primitive {self.fn!r}")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if len(self.coeffs) != _PRIMITIVES[self.fn][0]:
            raise StructuralError(f"{self.fn} takes {_PRIMITIVES[self.fn][0]} coefficients")

    def __call__(self, x):
        return _PRIMITIVES[self.fn][1](self.coeffs, x)


def _lincomb(a, w, start, cols=None):
    """``start + sum_k w[k] * a[:, cols[k]]`` accumulated column by column.

    Elementwise accumulation is bit-reproducible, unlike BLAS products whose
    summation order can depend on memory alignment.
    """
    if cols is None:
        cols = range(len(w))
    out = None
    for c, wk in zip(cols, w):
        term = a[:, c] * wk
        out = term if out is None else out + term
    return start + (np.zeros(a.shape[0]) if out is None else out)


@dataclass(frozen=True)
class Mechanism:
    """Structural equation for one vertex.

    * ``root``: ``X = E``
    * ``linear``: ``X = sum_k params[k] * Pa_k + E``
    * ``additive-tabular``: ``X = params[0] + sum(terms) + E`` (``params`` may be empty)
    * ``logistic-label``: ``P(D=1 | Pa) = sigmoid(params[0] + sum_k params[k+1] * Pa_k)``
    * ``table-label``: ``P(D=1 | Pa)`` looked up in ``table``, a tuple of
      ``(parent values, probability)`` rows
    """

    kind: str
    params: tuple = ()
    terms: tuple = ()
    table: tuple = ()

    def __post_init__(self):
        if self.kind not in X_KINDS + LABEL_KINDS:
            raise StructuralError(f"unknown mechanism kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        object.__setattr__(self, "terms", tuple(self.terms))
        rows = []
        for key, prob in self.table:
            prob = float(prob)
            if not 0.0 <= prob <= 1.0:
                raise StructuralError("table-label probabilities must lie in [0, 1]")
            rows.append((tuple(float(v) for v in key), prob))
        object.__setattr__(self, "table", tuple(rows))
        object.__setattr__(self, "_w", np.array(self.params, dtype=float))
        if rows and len({len(k) for k, _ in rows}) == 1:
            width = len(rows[0][0])
            object.__setattr__(self, "_keys", np.array([k for k, _ in rows], dtype=float).reshape(len(rows), width))
            object.__setattr__(self, "_probs", np.array([q for _, q in rows]))

    @classmethod
    def root(cls):
        return cls(ROOT)

    @classmethod
    def linear(cls, weights):
        return cls(LINEAR, tuple(weights))

    @classmethod
    def additive(cls, terms, const=0.0):
        return cls(ADDITIVE, (const,), tuple(terms))

    @classmethod
    def logistic_label(cls, intercept, weights):
        return cls(LOGISTIC_LABEL, (intercept, *weights))

    @classmethod
    def table_label(cls, rows):
        return cls(TABLE_LABEL, table=tuple(rows))

    def check_arity(self, n_parents: int, where: str):
        k = n_parents
        if self.kind == ROOT and k != 0:
            raise StructuralError(f"{where}: root mechanism on a vertex with {k} parents")
        if self.kind == LINEAR and len(self.params) != k:
            raise StructuralError(f"{where}: linear mechanism has {len(self.params)} weights for {k} parents")
        if self.kind == ADDITIVE:
            if len(self.params) > 1:
                raise StructuralError(f"{where}: additive mechanism takes at most one constant")
            for t in self.terms:
                if not 0 <= t.parent < k:
                    raise StructuralError(f"{where}: additive term refers to parent {t.parent} of {k}")
        if self.kind == LOGISTIC_LABEL and len(self.params) != k + 1:
            raise StructuralError(f"{where}: logistic-label needs {k + 1} coefficients, got {len(self.params)}")
        if self.kind == TABLE_LABEL:
            if not self.table:
                raise StructuralError(f"{where}: empty label table")
            if any(len(key) != k for key, _ in self.table):
                raise StructuralError(f"{where}: table keys must have {k} entries")

    def structural(self, pa: np.ndarray) -> np.ndarray:
        """Deterministic part ``g(Pa)`` of ``X = g(Pa) + E`` for ``(m, k)`` parent values."""
        m = pa.shape[0]
        if self.kind == ROOT:
            return np.zeros(m)
        if self.kind == LINEAR:
            return _lincomb(pa, self._w, 0.0)
        if self.kind == ADDITIVE:
            out = np.full(m, self.params[0] if self.params else 0.0)
            for t in self.terms:
                out = out + t(pa[:, t.parent])
            return out
        raise UnsupportedModelError(f"{self.kind} is a label mechanism")

    def label_proba(self, pa: np.ndarray) -> np.ndarray:
        if self.kind == LOGISTIC_LABEL:
            b = self._w
            return expit(_lincomb(pa, b[1:], b[0]))
        if self.kind == TABLE_LABEL:
            keys, probs = self._keys, self._probs
            if keys.shape[1] != pa.shape[1]:
                raise UnsupportedModelError("label table width differs from the number of parents")
            hit = np.all(np.abs(pa[:, None, :] - keys[None, :, :]) <= 1e-9, axis=2)
            found = hit.any(axis=1)
            if not found.all():
                bad = pa[np.argmin(found)]
                raise UnsupportedModelError(f"label table has no entry for parent values {tuple(bad)}")
            return probs[np.argmax(hit, axis=1)]
        raise UnsupportedModelError(f"{self.kind} is not a label mechanism")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in (LINEAR, LOGISTIC_LABEL):
            d["params"] = list(self.params)
        elif self.kind == ADDITIVE:
            d["const"] = self.params[0] if self.params else 0.0
            d["terms"] = [{"fn": t.fn, "parent": t.parent, "coeffs": list(t.coeffs)} for t in self.terms]
        elif self.kind == TABLE_LABEL:
            d["table"] = [{"parents": list(key), "prob": p} for key, p in self.table]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Mechanism":
        kind = d["kind"]
        if kind == ROOT:
            return cls.root()
        if kind in (LINEAR, LOGISTIC_LABEL):
            return cls(kind, tuple(d["params"]))
        if kind == ADDITIVE:
            terms = [Term(t["fn"], int(t["parent"]), tuple(t["coeffs"])) for t in d.get("terms", [])]
            return cls.additive(terms, d.get("const", 0.0))
        if kind == TABLE_LABEL:
            return cls.table_label([(row["parents"], row["prob"]) for row in d["table"]])
        raise StructuralError(f"unknown mechanism kind {kind!r}")


# --------------------------------------------------------------------------
# the model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    x: np.ndarray  # (n, p) endogenous values per coordinate
    e: np.ndarray  # (n, p) error values
    d: np.ndarray  # (n,) diagnosis labels


@dataclass(frozen=True)
class Scm:
    """Markovian structural model over ``graph``.

    ``mechanisms`` has one entry per vertex; ``error_dists`` one entry per
    coordinate (non-diagnosis vertex). ``interventions`` maps coordinates to
    ``("point", value)`` or ``("fresh",)``; it is only populated on submodels
    returned by :func:`rootcf.counterfactual.do_submodel`.
    """

    graph: CausalGraph
    mechanisms: tuple
    error_dists: tuple
    interventions: Mapping = field(default_factory=dict)

    def __post_init__(self):
        g = self.graph
        object.__setattr__(self, "mechanisms", tuple(self.mechanisms))
        object.__setattr__(self, "error_dists", tuple(self.error_dists))
        object.__setattr__(self, "interventions", dict(self.interventions))
        if len(self.mechanisms) != g.n:
            raise StructuralError(f"expected {g.n} mechanisms, got {len(self.mechanisms)}")
        if len(self.error_dists) != len(self.coords):
            raise StructuralError(f"expected {len(self.coords)} error distributions, got {len(self.error_dists)}")
        for v, mech in enumerate(self.mechanisms):
            mech.check_arity(len(g.parents(v)), g.name(v))
            if v == g.diagnosis_index:
                if mech.kind not in LABEL_KINDS:
                    raise StructuralError("the diagnosis vertex needs a label mechanism")
            elif mech.kind in LABEL_KINDS:
                raise StructuralError(f"label mechanism only allowed at the diagnosis vertex, found at {g.name(v)}")
        for c, spec in self.interventions.items():
            if not 0 <= c < self.p or spec[0] not in ("point", "fresh"):
                raise StructuralError(f"bad intervention entry {c}: {spec}")

    @cached_property
    def coords(self) -> tuple:
        """Vertex index of each error coordinate."""
        return tuple(v for v in range(self.graph.n) if v != self.graph.diagnosis_index)

    @cached_property
    def coord_of(self) -> dict:
        return {v: c for c, v in enumerate(self.coords)}

    @property
    def p(self) -> int:
        return len(self.coords)

    @property
    def has_label(self) -> bool:
        return self.graph.diagnosis_index is not None

    @property
    def is_discrete(self) -> bool:
        return all(d.is_discrete for d in self.error_dists)

    @cached_property
    def _plan(self):
        g = self.graph
        plan = []
        for v in g.order:
            if v == g.diagnosis_index:
                continue
            pcs = [self.coord_of[u] for u in g.parents(v)]
            plan.append((self.coord_of[v], pcs, self.mechanisms[v]))
        return plan

    @cached_property
    def _label_plan(self):
        g = self.graph
        if g.diagnosis_index is None:
            raise UnsupportedModelError("model has no diagnosis vertex")
        pcs = [self.coord_of[u] for u in g.parents(g.diagnosis_index)]
        return pcs, self.mechanisms[g.diagnosis_index]

    def _as_matrix(self, a, what):
        a = np.asarray(a, dtype=float)
        single = a.ndim == 1
        a2 = a[None, :] if single else a
        if a2.ndim != 2 or a2.shape[1] != self.p:
            raise ValueError(f"{what} must have {self.p} entries per row, got shape {a.shape}")
        return a2, single

    def push_forward(self, e) -> np.ndarray:
        """Endogenous values ``X(e)`` (coordinates only, diagnosis excluded)."""
        e2, single = self._as_matrix(e, "error vector")
        points = [(c, spec[1]) for c, spec in self.interventions.items() if spec[0] == "point"]
        if points:
            e2 = e2.copy()
            for c, v in points:
                e2[:, c] = v
        x = np.empty_like(e2)
        for c, pcs, mech in self._plan:
            if mech.kind == ROOT:
                x[:, c] = e2[:, c]
            elif mech.kind == LINEAR:
                x[:, c] = _lincomb(x, mech._w, e2[:, c], pcs)
            else:
                x[:, c] = mech.structural(x[:, pcs]) + e2[:, c]
        return x[0] if single else x

    def invert(self, x) -> np.ndarray:
        """Recover ``e`` from ``X(e)``."""
        x2, single = self._as_matrix(x, "x vector")
        for _, _, mech in self._plan:
            if mech.kind not in X_KINDS:
                raise UnsupportedModelError(f"mechanism {mech.kind} is not invertible")
        e = np.empty_like(x2)
        for c, pcs, mech in self._plan:
            e[:, c] = x2[:, c] - mech.structural(x2[:, pcs])
        return e[0] if single else e

    def label_proba(self, x) -> np.ndarray:
        """``P(D=1 | Pa(D))`` evaluated at endogenous values ``x``."""
        x2, single = self._as_matrix(x, "x vector")
        pcs, mech = self._label_plan
        out = mech.label_proba(x2[:, pcs])
        return out[0] if single else out

    def proba_from_errors(self, e) -> np.ndarray:
        return self.label_proba(self.push_forward(e))

    def error_states(self, coords: Optional[Sequence[int]] = None):
        """Enumerate the joint support of the error coordinates ``coords`` (all by default).

        Returns ``(states, probs)`` with ``states`` of shape ``(S, len(coords))``.
        """
        coords = tuple(range(self.p) if coords is None else coords)
        cache = self.__dict__.setdefault("_states_cache", {})
        if coords not in cache:
            cache[coords] = self._error_states(coords)
        return cache[coords]

    def _error_states(self, coords):
        supports = [self.error_dists[c].support() for c in coords]
        if not supports:
            return np.zeros((1, 0)), np.ones(1)
        size = int(np.prod([len(v) for v, _ in supports]))
        if size > 1 << 22:
            raise UnsupportedModelError(f"error space of size {size} is too large to enumerate")
        idx = np.array(list(itertools.product(*[range(len(v)) for v, _ in supports])), dtype=np.intp)
        states = np.column_stack([v[idx[:, k]] for k, (v, _) in enumerate(supports)])
        probs = np.ones(size)
        for k, (_, q) in enumerate(supports):
            probs = probs * q[idx[:, k]]
        return states, probs

    def with_interventions(self, interventions, dists=None) -> "Scm":
        dists = self.error_dists if dists is None else tuple(dists)
        return replace(self, error_dists=dists, interventions=dict(interventions))

    def with_error_dists(self, dists) -> "Scm":
        return replace(self, error_dists=tuple(dists))

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        g = self.graph
        names = [g.name(v) for v in range(g.n)]
        return {
            "variables": names,
            "edges": [[names[u], names[v]] for u, v in sorted(g.edges)],
            "diagnosis": names[g.diagnosis_index] if g.diagnosis_index is not None else None,
            "mechanisms": [{"variable": names[v], **m.to_dict()} for v, m in enumerate(self.mechanisms)],
            "errors": [{"variable": names[v], **d.to_dict()} for v, d in zip(self.coords, self.error_dists)],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scm":
        names = list(d["variables"])
        pos = {name: i for i, name in enumerate(names)}
        try:
            edges = [(pos[a], pos[b]) for a, b in d["edges"]]
            diag = pos[d["diagnosis"]] if d.get("diagnosis") is not None else None
        except KeyError as exc:
            raise StructuralError(f"unknown variable {exc.args[0]!r} in edges or diagnosis") from None
        graph = CausalGraph(len(names), edges, labels=names, diagnosis_index=diag)
        mechs = [None] * len(names)
        for entry in d["mechanisms"]:
            mechs[pos[entry["variable"]]] = Mechanism.from_dict(entry)
        if any(m is None for m in mechs):
            missing = [names[i] for i, m in enumerate(mechs) if m is None]
            raise StructuralError(f"missing mechanisms for {missing}")
        errs = {pos[entry["variable"]]: ErrorDistribution.from_dict(entry) for entry in d["errors"]}
        coords = [v for v in range(len(names)) if v != diag]
        if set(errs) != set(coords):
            raise StructuralError("errors must list exactly the non-diagnosis variables")
        return cls(graph, tuple(mechs), tuple(errs[v] for v in coords))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "Scm":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# module-level operations
# --------------------------------------------------------------------------

_CHUNK = 4096


def sample(scm: Scm, n: int, seed: int) -> Dataset:
    """Draw ``n`` rows ``(x, e, d)``.

    Rows are generated in fixed-size blocks, each from its own spawned seed
    stream, so the output depends only on ``seed`` and ``n``.
    """
    if n < 1:
        raise ValueError("sample size must be at least 1")
    root = np.random.SeedSequence(seed)
    n_blocks = -(-n // _CHUNK)
    es, ds = [], []
    for b, child in enumerate(root.spawn(n_blocks)):
        rng = np.random.default_rng(child)
        m = min(_CHUNK, n - b * _CHUNK)
        e = np.column_stack([dist.sample(rng, m) for dist in scm.error_dists]) if scm.p else np.zeros((m, 0))
        es.append(e)
        ds.append(rng.random(m))
    e = np.vstack(es)
    x = scm.push_forward(e)
    if scm.has_label:
        d = (np.concatenate(ds) < scm.label_proba(x)).astype(np.int64)
    else:
        d = np.zeros(n, dtype=np.int64)
    return Dataset(x=x, e=e, d=d)


def push_forward(scm: Scm, e) -> np.ndarray:
    return scm.push_forward(e)


def invert(scm: Scm, x) -> np.ndarray:
    return scm.invert(x)


def load_scm(path) -> Scm:
    with open(path, encoding="utf-8") as fh:
        return Scm.from_dict(json.load(fh))


def dump_scm(scm: Scm, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(scm.to_json())
        fh.write("\n")
