"""Ready-made structural models: the OR model, the four-variable depression chain and random families."""

from __future__ import annotations

import numpy as np

from .graph import CausalGraph, random_dag
from .scm import ErrorDistribution, Mechanism, Scm, Term

FIGURE1_LABELS = ("X1", "X2", "X3", "X4", "D")
FIGURE1_EDGES = ((0, 2), (1, 2), (2, 3), (3, 4))


def or_model(prob_one: float = 0.5) -> Scm:
    """``X1 = E1``, ``X2 = E2`` binary, and ``D = 1`` exactly when ``X1 or X2``."""
    graph = CausalGraph(3, [(0, 2), (1, 2)], labels=("X1", "X2", "D"), diagnosis_index=2)
    table = [((a, b), float(a or b)) for a in (0.0, 1.0) for b in (0.0, 1.0)]
    return Scm(
        graph,
        (Mechanism.root(), Mechanism.root(), Mechanism.table_label(table)),
        (ErrorDistribution.bernoulli(prob_one), ErrorDistribution.bernoulli(prob_one)),
    )


def figure1_scm(w13=1.0, w23=1.0, w34=1.0, intercept=0.0, w4d=1.0, errors=None) -> Scm:
    """Spouse loss X1 and family history X2 drive depression X3, alcohol use X4, then D."""
    graph = CausalGraph(5, FIGURE1_EDGES, labels=FIGURE1_LABELS, diagnosis_index=4)
    mechs = (
        Mechanism.root(),
        Mechanism.root(),
        Mechanism.linear((w13, w23)),
        Mechanism.linear((w34,)),
        Mechanism.logistic_label(intercept, (w4d,)),
    )
    if errors is None:
        errors = tuple(ErrorDistribution.laplace(0.0, 1.0) for _ in range(4))
    return Scm(graph, mechs, tuple(errors))


def _label_parents(p, rng, label_parents):
    if label_parents == "sinks":
        return None
    if label_parents == "random":
        chosen = [v for v in range(p) if rng.random() < 0.5]
        return chosen or [int(rng.integers(p))]
    return sorted(int(v) for v in label_parents)


def _with_diagnosis(xgraph: CausalGraph, parents_of_d, labels=None):
    p = xgraph.n
    if parents_of_d is None:
        has_child = {u for u, _ in xgraph.edges}
        parents_of_d = [v for v in range(p) if v not in has_child]
    edges = list(xgraph.edges) + [(v, p) for v in parents_of_d]
    if labels is None:
        labels = tuple(f"X{i + 1}" for i in range(p)) + ("D",)
    return CausalGraph(p + 1, edges, labels=labels, diagnosis_index=p)


def random_linear_scm(p, rng, edge_prob=0.4, dist="laplace", scale=1.0, weight_range=(0.5, 1.5),
                      signed=True, label_range=(0.5, 1.5), intercept=0.0, label_parents="sinks") -> Scm:
    """Random linear SEM over ``p`` variables plus a logistic diagnosis sink.

    Weights are drawn uniformly from ``weight_range`` (with random sign when
    ``signed``); the diagnosis depends on the sinks of the X-graph by default.
    """
    xg = random_dag(p, rng, edge_prob)
    graph = _with_diagnosis(xg, _label_parents(p, rng, label_parents))
    mechs = []
    for v in range(p):
        k = len(graph.parents(v))
        if k == 0:
            mechs.append(Mechanism.root())
        else:
            w = rng.uniform(*weight_range, size=k)
            if signed:
                w = w * rng.choice([-1.0, 1.0], size=k)
            mechs.append(Mechanism.linear(w))
    k = len(graph.parents(p))
    mechs.append(Mechanism.logistic_label(intercept, rng.uniform(*label_range, size=k)))
    errors = tuple(make_error(dist, scale) for _ in range(p))
    return Scm(graph, tuple(mechs), errors)


def random_additive_scm(p, rng, edge_prob=0.4, dist="laplace", scale=1.0, weight_range=(0.5, 1.5),
                        label_range=(0.5, 1.5), intercept=0.0, label_parents="sinks") -> Scm:
    """Random additive-noise SEM with ``tanh`` parent contributions."""
    xg = random_dag(p, rng, edge_prob)
    graph = _with_diagnosis(xg, _label_parents(p, rng, label_parents))
    mechs = []
    for v in range(p):
        k = len(graph.parents(v))
        if k == 0:
            mechs.append(Mechanism.root())
        else:
            w = rng.uniform(*weight_range, size=k)
            mechs.append(Mechanism.additive([Term("tanh", j, (w[j], 1.0)) for j in range(k)]))
    k = len(graph.parents(p))
    mechs.append(Mechanism.logistic_label(intercept, rng.uniform(*label_range, size=k)))
    errors = tuple(make_error(dist, scale) for _ in range(p))
    return Scm(graph, tuple(mechs), errors)


def random_discrete_scm(p, rng, edge_prob=0.4, weight_range=(-1.5, 1.5), label_range=(-2.0, 2.0),
                        label_kind="logistic", prob_range=(0.2, 0.8), label_parents="random") -> Scm:
    """Random linear SEM with Bernoulli errors; enumerable for small ``p``.

    ``label_kind="table"`` draws an arbitrary ``P(D=1 | Pa(D))`` for every
    reachable parent configuration instead of a logistic link.
    """
    xg = random_dag(p, rng, edge_prob)
    graph = _with_diagnosis(xg, _label_parents(p, rng, label_parents))
    mechs = []
    for v in range(p):
        k = len(graph.parents(v))
        mechs.append(Mechanism.root() if k == 0 else Mechanism.linear(np.round(rng.uniform(*weight_range, size=k), 3)))
    errors = tuple(ErrorDistribution.bernoulli(float(np.round(rng.uniform(*prob_range), 3))) for _ in range(p))
    k = len(graph.parents(p))
    if label_kind == "logistic":
        label = Mechanism.logistic_label(rng.uniform(*label_range), rng.uniform(*label_range, size=k))
        return Scm(graph, tuple(mechs) + (label,), errors)
    # placeholder label to obtain the reachable parent configurations
    draft = Scm(graph, tuple(mechs) + (Mechanism.logistic_label(0.0, np.zeros(k)),), errors)
    states, _ = draft.error_states()
    pa = draft.push_forward(states)[:, list(graph.parents(p))]
    keys = sorted({tuple(np.round(row, 9)) for row in pa})
    table = [(key, float(np.round(rng.uniform(), 6))) for key in keys]
    return Scm(graph, tuple(mechs) + (Mechanism.table_label(table),), errors)


def make_error(dist: str, scale: float = 1.0) -> ErrorDistribution:
    if dist == "laplace":
        return ErrorDistribution.laplace(0.0, scale)
    if dist == "gaussian":
        return ErrorDistribution.gaussian(0.0, scale)
    if dist == "uniform":
        return ErrorDistribution.uniform(-scale, scale)
    raise ValueError(f"unknown error family {dist!r}")
