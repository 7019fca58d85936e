"""Directed acyclic graphs over the endogenous variables of a structural model."""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CycleError, StructuralError


@dataclass(frozen=True)
class CausalGraph:
    """DAG with ``n`` vertices labelled ``0..n-1``.

    ``edges`` holds ``(parent, child)`` pairs. ``diagnosis_index`` designates the
    sink vertex playing the role of the diagnosis ``D``; it may be ``None`` for
    plain graphs used in graph-only computations.
    """

    n: int
    edges: frozenset = field(default_factory=frozenset)
    labels: Optional[tuple] = None
    diagnosis_index: Optional[int] = None

    def __init__(self, n, edges=(), labels=None, diagnosis_index=None):
        edge_list = [tuple(int(v) for v in e) for e in edges]
        n = int(n)
        if n < 1:
            raise StructuralError("graph needs at least one vertex")
        for u, v in edge_list:
            if not (0 <= u < n and 0 <= v < n):
                raise StructuralError(f"edge ({u}, {v}) out of range for n={n}")
            if u == v:
                raise StructuralError(f"self-loop at vertex {u}")
        if len(set(edge_list)) != len(edge_list):
            raise StructuralError("duplicate edges")
        if labels is not None:
            labels = tuple(str(s) for s in labels)
            if len(labels) != n:
                raise StructuralError(f"expected {n} labels, got {len(labels)}")
            if len(set(labels)) != n:
                raise StructuralError("variable labels must be unique")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", frozenset(edge_list))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "diagnosis_index", None if diagnosis_index is None else int(diagnosis_index))
        if self.diagnosis_index is not None:
            if not 0 <= self.diagnosis_index < n:
                raise StructuralError(f"diagnosis index {self.diagnosis_index} out of range")
            if any(u == self.diagnosis_index for u, _ in self.edges):
                raise StructuralError("the diagnosis vertex must be a sink (no outgoing edges)")
        object.__setattr__(self, "_order", tuple(_kahn(n, self.edges)))
        object.__setattr__(self, "_parents", tuple(tuple(sorted(u for u, w in self.edges if w == v)) for v in range(n)))
        object.__setattr__(self, "_children", tuple(tuple(sorted(w for u, w in self.edges if u == v)) for v in range(n)))

    def parents(self, v: int) -> tuple:
        """Parents of ``v`` in ascending index order."""
        self._check(v)
        return self._parents[v]

    def children(self, v: int) -> tuple:
        self._check(v)
        return self._children[v]

    def name(self, v: int) -> str:
        return self.labels[v] if self.labels is not None else f"X{v + 1}"

    def index(self, name: str) -> int:
        if self.labels is None:
            raise KeyError(name)
        return self.labels.index(name)

    @property
    def order(self) -> tuple:
        return self._order

    def roots(self) -> tuple:
        has_parent = {v for _, v in self.edges}
        return tuple(v for v in range(self.n) if v not in has_parent)

    def _check(self, v):
        if not 0 <= int(v) < self.n:
            raise IndexError(f"vertex {v} out of range for n={self.n}")


def _kahn(n, edges):
    children = [[] for _ in range(n)]
    indeg = [0] * n
    for u, v in edges:
        children[u].append(v)
        indeg[v] += 1
    heap = [v for v in range(n) if indeg[v] == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        u = heapq.heappop(heap)
        out.append(u)
        for v in children[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(out) != n:
        raise CycleError(_find_cycle(n, edges, set(range(n)) - set(out)))
    return out


def _find_cycle(n, edges, candidates):
    # every vertex left over by Kahn lies on or downstream of a cycle;
    # walking parents inside the leftover set must revisit a vertex
    parents = {v: sorted(u for u, w in edges if w == v and u in candidates) for v in candidates}
    v = min(candidates)
    seen = {}
    path = []
    while v not in seen:
        seen[v] = len(path)
        path.append(v)
        v = parents[v][0]
    cycle = path[seen[v]:]
    cycle.reverse()
    return cycle + [cycle[0]]


def topo_order(graph: CausalGraph) -> list:
    """Topological order with ties broken by ascending vertex index."""
    return list(graph.order)


def ancestors(graph: CausalGraph, v: int) -> set:
    """All vertices with a directed path into ``v``, ``v`` included."""
    graph._check(v)
    parents = [[] for _ in range(graph.n)]
    for a, b in graph.edges:
        parents[b].append(a)
    seen = {int(v)}
    queue = deque([int(v)])
    while queue:
        w = queue.popleft()
        for u in parents[w]:
            if u not in seen:
                seen.add(u)
                queue.append(u)
    return seen


def ancestors_of_set(graph: CausalGraph, vs: Iterable[int]) -> set:
    out = set()
    for v in vs:
        out |= ancestors(graph, v)
    return out


def d_separated(graph: CausalGraph, i: int, j: int, W: Iterable[int] = ()) -> bool:
    """True when ``i`` and ``j`` are d-separated given ``W``.

    Uses the reachable-trail search over (vertex, direction) states: a trail
    passes a collider only if the collider is an ancestor of ``W`` and passes
    a non-collider only if it is outside ``W``.
    """
    W = {int(w) for w in W}
    for v in (i, j, *W):
        graph._check(v)
    if i == j:
        raise ValueError("d-separation needs two distinct vertices")
    if i in W or j in W:
        raise ValueError("query vertices must not be in the conditioning set")

    parents = [[] for _ in range(graph.n)]
    children = [[] for _ in range(graph.n)]
    for a, b in graph.edges:
        parents[b].append(a)
        children[a].append(b)
    anc_w = ancestors_of_set(graph, W)

    # "up": arrived from a child (travelling against edge direction)
    # "down": arrived from a parent
    visited = set()
    queue = deque([(i, "up")])
    while queue:
        v, direction = queue.popleft()
        if (v, direction) in visited:
            continue
        visited.add((v, direction))
        if v == j:
            return False
        if direction == "up" and v not in W:
            for u in parents[v]:
                queue.append((u, "up"))
            for c in children[v]:
                queue.append((c, "down"))
        elif direction == "down":
            if v not in W:
                for c in children[v]:
                    queue.append((c, "down"))
            if v in anc_w:
                for u in parents[v]:
                    queue.append((u, "up"))
    return True


def random_dag(n: int, rng: np.random.Generator, edge_prob: float = 0.4, labels: Optional[Sequence[str]] = None,
               diagnosis_index: Optional[int] = None) -> CausalGraph:
    """Random DAG: uniform vertex permutation, then each forward edge with probability ``edge_prob``."""
    perm = rng.permutation(n)
    edges = []
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < edge_prob:
                edges.append((int(perm[a]), int(perm[b])))
    return CausalGraph(n, edges, labels=labels, diagnosis_index=diagnosis_index)
