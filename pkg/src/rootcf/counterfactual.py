"""Interventional and backtracking counterfactuals.

Both procedures run in three steps. Interventional: abduction of ``P(E | z)``,
action (swap mechanisms for the submodel), prediction. Backtracking: abduction
over the joint ``P(E*, E)`` built from a backtracking kernel ``P(E* | E)``,
marginalisation of the factual errors, prediction through the unmodified
mechanisms.

Evidence is keyed by *vertex* index; actions and error vectors are keyed by
*coordinate* (see :class:`rootcf.scm.Scm`). Evidence on the diagnosis vertex
is rejected: its noise is implicit, so the coupling between factual and
counterfactual diagnoses is not defined.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import InconsistentEvidenceError, KernelValidationError, UnsupportedModelError
from .scm import ErrorDistribution, Scm

_TOL = 1e-12
_KEY_DIGITS = 12


@dataclass(frozen=True)
class Action:
    """Intervention on error coordinates: ``point`` fixes values, ``stochastic-copy`` redraws from ``P(E_V)``."""

    targets: tuple
    kind: str = "stochastic-copy"
    values: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.targets:
            raise ValueError("an action needs at least one target")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError("duplicate action targets")
        if self.kind == "point":
            if len(self.values) != len(self.targets):
                raise ValueError("point action needs one value per target")
            if not np.all(np.isfinite(self.values)):
                raise ValueError("point action values must be finite")
        elif self.kind != "stochastic-copy":
            raise ValueError(f"unknown action kind {self.kind!r}")

    @classmethod
    def point(cls, values: Mapping[int, float]):
        keys = sorted(values)
        return cls(tuple(keys), "point", tuple(values[k] for k in keys))

    @classmethod
    def copy(cls, targets):
        return cls(tuple(sorted(targets)), "stochastic-copy")


@dataclass(frozen=True)
class CounterfactualQuery:
    """What we know and what we ask.

    ``errors`` is a full factual error vector; ``observed`` maps vertex
    indices to factual values. ``targets`` are vertex indices (the diagnosis
    vertex is allowed).
    """

    targets: tuple
    errors: Optional[tuple] = None
    observed: Mapping = field(default_factory=dict)
    action: Optional[Action] = None

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if self.errors is not None:
            object.__setattr__(self, "errors", tuple(float(v) for v in self.errors))
            if self.observed:
                raise ValueError("give either a full error vector or observed values, not both")
        object.__setattr__(self, "observed", {int(k): float(v) for k, v in dict(self.observed).items()})
        if not self.targets:
            raise ValueError("query needs at least one target")


@dataclass
class Distribution:
    """Discrete distribution over target outcome tuples."""

    targets: tuple
    outcomes: list
    weights: np.ndarray
    stderr: Optional[np.ndarray] = None

    def prob(self, outcome) -> float:
        key = _key(outcome)
        return float(sum(w for o, w in zip(self.outcomes, self.weights) if _key(o) == key))

    def marginal(self, target: int, value) -> float:
        k = self.targets.index(target)
        return float(sum(w for o, w in zip(self.outcomes, self.weights) if round(o[k], _KEY_DIGITS) == round(value, _KEY_DIGITS)))

    def total(self) -> float:
        return float(np.sum(self.weights))

    def to_dict(self) -> dict:
        out = {"targets": list(self.targets),
               "outcomes": [list(o) for o in self.outcomes],
               "weights": [float(w) for w in self.weights]}
        if self.stderr is not None:
            out["stderr"] = [float(s) for s in self.stderr]
        return out


def _key(values):
    return tuple(round(float(v), _KEY_DIGITS) + 0.0 for v in values)


# --------------------------------------------------------------------------
# backtracking kernels
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BacktrackingKernel:
    """Backtracking conditional ``P(E* | E)``.

    ``degenerate`` keeps every error value (``P(E* = e | e) = 1``).
    ``discrete-table`` holds, per coordinate, a support and a row-stochastic
    matrix ``T[a, b] = P(e*_i = support[b] | e_i = support[a])``. Tables are
    validated against closeness, symmetry and decomposability on construction.
    """

    kind: str = "degenerate"
    supports: tuple = ()
    tables: tuple = ()

    @classmethod
    def degenerate(cls):
        return cls("degenerate")

    @classmethod
    def from_tables(cls, supports, tables):
        supports = tuple(np.asarray(s, dtype=float) for s in supports)
        tables = tuple(np.asarray(t, dtype=float) for t in tables)
        if len(supports) != len(tables):
            raise ValueError("one table per coordinate support")
        for i, (s, t) in enumerate(zip(supports, tables)):
            if t.shape != (len(s), len(s)):
                raise ValueError(f"coordinate {i}: table shape {t.shape} does not match support size {len(s)}")
            if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > _TOL):
                raise ValueError(f"coordinate {i}: rows must be probability vectors")
            if np.max(np.abs(t - t.T)) > _TOL:
                raise KernelValidationError("symmetry", f"coordinate {i}: P(e*|e) != P(e|e*)")
            diag = np.diag(t)
            off = t - np.diag(np.full(len(s), np.inf))
            if np.any(off.max(axis=1) >= diag):
                raise KernelValidationError("closeness", f"coordinate {i}: e is not the unique maximiser of P(e*|e)")
        return cls("discrete-table", supports, tables)

    @classmethod
    def from_joint(cls, supports, joint):
        """Build from a joint table over full error vectors (rows: e, columns: e*).

        States are ordered as ``itertools.product`` over the per-coordinate
        supports. The table must factor into per-coordinate conditionals.
        """
        supports = [np.asarray(s, dtype=float) for s in supports]
        joint = np.asarray(joint, dtype=float)
        sizes = [len(s) for s in supports]
        n_states = int(np.prod(sizes))
        if joint.shape != (n_states, n_states):
            raise ValueError(f"joint table must be {n_states}x{n_states}")
        if np.any(joint < 0) or np.any(np.abs(joint.sum(axis=1) - 1.0) > _TOL):
            raise ValueError("rows must be probability vectors")
        idx = list(itertools.product(*[range(k) for k in sizes]))
        tables = []
        for i, k in enumerate(sizes):
            t = np.zeros((k, k))
            for a in range(k):
                row = next(r for r, s in enumerate(idx) if s[i] == a)
                for c, s in enumerate(idx):
                    t[a, s[i]] += joint[row, c]
            tables.append(t)
        rebuilt = np.ones_like(joint)
        for r, sr in enumerate(idx):
            for c, sc in enumerate(idx):
                rebuilt[r, c] = np.prod([tables[i][sr[i], sc[i]] for i in range(len(sizes))])
        if np.max(np.abs(rebuilt - joint)) > _TOL:
            raise KernelValidationError("decomposability", "joint kernel is not a product of per-coordinate conditionals")
        return cls.from_tables(supports, tables)

    def coordinate_pairs(self, i: int, dist: ErrorDistribution):
        """``(e_i, e*_i, P(e_i) P(e*_i | e_i))`` for every pair with positive weight."""
        values, probs = dist.support()
        if self.kind == "degenerate":
            return [(v, v, q) for v, q in zip(values, probs) if q > 0]
        support, table = self.supports[i], self.tables[i]
        if len(support) != len(values) or np.any(np.abs(np.sort(support) - np.sort(values)) > 1e-12):
            raise ValueError(f"kernel support for coordinate {i} does not match the error distribution")
        pos = {round(float(v), _KEY_DIGITS): a for a, v in enumerate(support)}
        out = []
        for v, q in zip(values, probs):
            a = pos[round(float(v), _KEY_DIGITS)]
            for b, w in enumerate(table[a]):
                if q * w > 0:
                    out.append((v, support[b], q * w))
        return out


# --------------------------------------------------------------------------
# shared machinery
# --------------------------------------------------------------------------

def do_submodel(scm: Scm, action: Action) -> Scm:
    """Submodel in which the targeted error terms are fixed or redrawn."""
    cache = scm.__dict__.setdefault("_submodels", {})
    if action not in cache:
        cache[action] = _submodel(scm, action)
    return cache[action]


def _submodel(scm: Scm, action: Action) -> Scm:
    for t in action.targets:
        if not 0 <= t < scm.p:
            raise IndexError(f"action target {t} out of range for {scm.p} error coordinates")
    interventions = dict(scm.interventions)
    dists = list(scm.error_dists)
    if action.kind == "point":
        for t, v in zip(action.targets, action.values):
            interventions[t] = ("point", v)
            dists[t] = ErrorDistribution.discrete((v,), (1.0,))
    else:
        for t in action.targets:
            interventions[t] = ("fresh",)
    return scm.with_interventions(interventions, dists)


def _enumeration(scm: Scm):
    cache = scm.__dict__.get("_enum_cache")
    if cache is None:
        states, probs = scm.error_states()
        cache = (states, probs, scm.push_forward(states))
        scm.__dict__["_enum_cache"] = cache
    return cache


def _check_evidence_vertices(scm: Scm, evidence: Mapping):
    for v in evidence:
        scm.graph._check(v)
        if v == scm.graph.diagnosis_index:
            raise UnsupportedModelError("evidence on the diagnosis vertex is not supported")


def _matches(scm: Scm, x: np.ndarray, evidence: Mapping) -> np.ndarray:
    ok = np.ones(x.shape[0], dtype=bool)
    for v, val in evidence.items():
        ok &= np.abs(x[:, scm.coord_of[v]] - val) <= 1e-9
    return ok


def _in_support(scm: Scm, e) -> bool:
    for dist, v in zip(scm.error_dists, e):
        if dist.is_discrete and not any(abs(a - v) <= 1e-12 and q > 0 for a, q in zip(dist.values, dist.probs)):
            return False
    return True


def _predict(model: Scm, rows: np.ndarray, weights: np.ndarray, targets, fresh, samples, seed) -> Distribution:
    """Push posterior error rows through ``model`` and tabulate target outcomes.

    Coordinates in ``fresh`` are redrawn from their distributions: enumerated
    when discrete, Monte Carlo with ``samples`` draws otherwise.
    """
    diag = model.graph.diagnosis_index
    for t in targets:
        model.graph._check(t)
    fresh = sorted(fresh)
    mc = any(not model.error_dists[c].is_discrete for c in fresh)
    if fresh and not mc:
        draws, qs = model.error_states(fresh)
    elif mc:
        rng = np.random.default_rng(seed)
        draws = np.column_stack([model.error_dists[c].sample(rng, samples) for c in fresh])
        qs = np.full(samples, 1.0 / samples)
    else:
        draws, qs = np.zeros((1, 0)), np.ones(1)

    n_rows, n_draws = rows.shape[0], draws.shape[0]
    full = np.repeat(rows, n_draws, axis=0)
    if fresh:
        full[:, fresh] = np.tile(draws, (n_rows, 1))
    w = np.outer(weights, qs).ravel()
    draw_id = np.tile(np.arange(n_draws), n_rows)
    x = model.push_forward(full)

    if tuple(targets) == (diag,) and not mc:
        p1 = float(w @ model.label_proba(x))
        return Distribution((diag,), [(0.0,), (1.0,)], np.array([1.0 - p1, p1]))

    cols = []
    has_d = diag in targets
    pd1 = model.label_proba(x) if has_d else None
    for t in targets:
        cols.append(None if t == diag else x[:, model.coord_of[t]])

    branches = [(1, pd1), (0, 1.0 - pd1)] if has_d else [(None, None)]
    all_vals, all_w, all_draw = [], [], []
    for dval, pw in branches:
        all_vals.append(np.column_stack([np.full(len(w), float(dval)) if c is None else c for c in cols]))
        all_w.append(w if pw is None else w * pw)
        all_draw.append(draw_id)
    vals = np.round(np.vstack(all_vals), _KEY_DIGITS) + 0.0
    ww = np.concatenate(all_w)
    dd = np.concatenate(all_draw)
    keep = ww > 0
    vals, ww, dd = vals[keep], ww[keep], dd[keep]
    uniq, inverse = np.unique(vals, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    weights_out = np.bincount(inverse, weights=ww, minlength=len(uniq))
    stderr = None
    if mc:
        # per-draw estimates x_od = c_od / q_d; only nonzero (outcome, draw) cells are materialised
        cell, cell_inv = np.unique(inverse * n_draws + dd, return_inverse=True)
        c = np.bincount(cell_inv.ravel(), weights=ww)
        x_od = c / qs[cell % n_draws]
        sum_sq = np.bincount(cell // n_draws, weights=x_od * x_od, minlength=len(uniq))
        var = np.maximum(sum_sq - n_draws * weights_out ** 2, 0.0) / (n_draws - 1)
        stderr = np.sqrt(var / n_draws)
    outcomes = [tuple(float(v) for v in row) for row in uniq]
    return Distribution(tuple(targets), outcomes, weights_out, stderr)


# --------------------------------------------------------------------------
# interventional counterfactuals
# --------------------------------------------------------------------------

def abduce(scm: Scm, query: CounterfactualQuery):
    """Posterior error rows and weights given the query evidence."""
    if query.errors is not None:
        e = np.asarray(query.errors, dtype=float)
        if e.shape != (scm.p,):
            raise ValueError(f"error vector must have {scm.p} entries")
        if not _in_support(scm, e):
            raise InconsistentEvidenceError(f"error vector {tuple(e)} has probability zero")
        return e[None, :], np.ones(1)
    _check_evidence_vertices(scm, query.observed)
    if scm.is_discrete:
        cache = scm.__dict__.setdefault("_abduction_cache", {})
        key = tuple(sorted(query.observed.items()))
        if key not in cache:
            states, probs, x = _enumeration(scm)
            w = probs * _matches(scm, x, query.observed)
            total = w.sum()
            if total <= 0:
                raise InconsistentEvidenceError("evidence has probability zero")
            keep = w > 0
            cache[key] = (states[keep], w[keep] / total)
        return cache[key]
    if set(query.observed) != set(scm.coords):
        raise UnsupportedModelError("continuous models need every non-diagnosis variable observed")
    x = np.array([query.observed[v] for v in scm.coords])
    return scm.invert(x)[None, :], np.ones(1)


def interventional_counterfactual(scm: Scm, query: CounterfactualQuery, samples: int = 10000, seed: int = 0) -> Distribution:
    """Abduction, action, prediction. Returns the distribution of ``query.targets``."""
    rows, weights = abduce(scm, query)
    model = scm if query.action is None else do_submodel(scm, query.action)
    fresh = [c for c, spec in model.interventions.items() if spec[0] == "fresh"]
    return _predict(model, rows, weights, query.targets, fresh, samples, seed)


# --------------------------------------------------------------------------
# backtracking counterfactuals
# --------------------------------------------------------------------------

def backtracking_counterfactual(scm: Scm, kernel: BacktrackingKernel, v_star: Optional[Mapping] = None,
                                z: Optional[Mapping] = None, targets: Optional[Sequence[int]] = None,
                                factual_errors=None) -> Distribution:
    """Backtracking counterfactual ``P(Y* | v*, z)``.

    ``v_star`` constrains counterfactual vertex values, ``z`` factual vertex
    values; ``factual_errors`` pins the whole factual error vector instead of
    ``z``. ``targets`` defaults to the diagnosis vertex.
    """
    v_star = {int(k): float(v) for k, v in (v_star or {}).items()}
    z = {int(k): float(v) for k, v in (z or {}).items()}
    if targets is None:
        targets = (scm.graph.diagnosis_index,)
    _check_evidence_vertices(scm, v_star)
    _check_evidence_vertices(scm, z)
    if factual_errors is not None and z:
        raise ValueError("give either factual errors or factual observations, not both")

    if kernel.kind == "degenerate" and factual_errors is not None:
        e = np.asarray(factual_errors, dtype=float)
        if e.shape != (scm.p,):
            raise ValueError(f"error vector must have {scm.p} entries")
        if not _in_support(scm, e):
            raise InconsistentEvidenceError("factual error vector has probability zero")
        if v_star and not _matches(scm, scm.push_forward(e)[None, :], v_star)[0]:
            raise InconsistentEvidenceError("counterfactual evidence contradicts the preserved error values")
        return _predict(scm, e[None, :], np.ones(1), targets, [], 0, 0)

    if not scm.is_discrete:
        raise UnsupportedModelError("backtracking on continuous models needs the degenerate kernel and a full error vector")

    pairs = [kernel.coordinate_pairs(i, d) for i, d in enumerate(scm.error_dists)]
    combos = list(itertools.product(*pairs))
    e_fact = np.array([[pr[0] for pr in c] for c in combos], dtype=float).reshape(len(combos), scm.p)
    e_cf = np.array([[pr[1] for pr in c] for c in combos], dtype=float).reshape(len(combos), scm.p)
    w = np.array([np.prod([pr[2] for pr in c]) for c in combos])

    # abduction over the joint (E*, E)
    if factual_errors is not None:
        fe = np.asarray(factual_errors, dtype=float)
        w = w * np.all(np.abs(e_fact - fe[None, :]) <= 1e-12, axis=1)
    if z:
        w = w * _matches(scm, scm.push_forward(e_fact), z)
    if v_star:
        w = w * _matches(scm, scm.push_forward(e_cf), v_star)
    total = w.sum()
    if total <= 0:
        raise InconsistentEvidenceError("evidence has probability zero under the joint P(E*, E)")
    keep = w > 0
    # marginalising E: rows carry only e* from here on
    return _predict(scm, e_cf[keep], w[keep] / total, targets, [], 0, 0)


# --------------------------------------------------------------------------
# executable equivalences
# --------------------------------------------------------------------------

def factual_expectation(scm: Scm, e, V) -> float:
    """``E_{E_V} P(D=1 | e_W, E_V)`` by direct enumeration over the marginalised coordinates."""
    e = np.asarray(e, dtype=float)
    V = sorted(V)
    if not V:
        return float(scm.proba_from_errors(e))
    states, probs = scm.error_states(V)
    rows = np.repeat(e[None, :], len(probs), axis=0)
    rows[:, V] = states
    return float(probs @ scm.proba_from_errors(rows))


def _backtrack_table(scm: Scm, backtrack, cache):
    """Backtracking value of every joint error state, indexed mixed-radix by support position."""
    if "_table" not in cache:
        states, _ = scm.error_states()
        sizes = [len(d.support()[0]) for d in scm.error_dists]
        strides = np.ones(scm.p, dtype=np.intp)
        for c in range(scm.p - 2, -1, -1):
            strides[c] = strides[c + 1] * sizes[c + 1]
        cache["_table"] = (np.array([backtrack(s) for s in states]), strides, sizes)
    return cache["_table"]


def _world_indices(scm: Scm, e, V, backtrack, cache):
    """Table rows of the worlds that keep ``e`` off ``V`` and range over the joint support on ``V``."""
    _, strides, sizes = _backtrack_table(scm, backtrack, cache)
    key = ("_offsets", tuple(V))
    if key not in cache:
        grid = np.array(list(itertools.product(*[range(sizes[c]) for c in V])), dtype=np.intp)
        cache[key] = grid @ strides[V]
    pkey = ("_position", tuple(e))
    if pkey not in cache:
        cache[pkey] = np.array([np.argmin(np.abs(d.support()[0] - v)) for d, v in zip(scm.error_dists, e)])
    pos = cache[pkey].copy()
    pos[V] = 0
    return int(pos @ strides) + cache[key]


def verify_equivalence(scm: Scm, e, V, _cache=None) -> dict:
    """Evaluate both sides of the factual/backtracking identity and the
    interventional/factual/backtracking identity for patient ``e`` and
    marginalised coordinates ``V``, all by exhaustive enumeration.
    """
    if not scm.is_discrete:
        raise UnsupportedModelError("equivalence checks need a discrete model")
    if scm.p > 12:
        raise UnsupportedModelError("equivalence checks are limited to 12 error coordinates")
    e = np.asarray(e, dtype=float)
    V = sorted(int(v) for v in V)
    d = scm.graph.diagnosis_index
    kernel = BacktrackingKernel.degenerate()
    cache = {} if _cache is None else _cache

    def backtrack(world):
        key = tuple(world)
        if key not in cache:
            cache[key] = backtracking_counterfactual(scm, kernel, factual_errors=world).marginal(d, 1)
        return cache[key]

    # per-patient quantities shared by every V
    pkey = ("_patient", tuple(e))
    if pkey not in cache:
        if not _in_support(scm, e):
            raise InconsistentEvidenceError(f"patient {tuple(e)} has probability zero")
        x = scm.push_forward(e)
        cache[pkey] = (float(scm.proba_from_errors(e)), backtrack(e), {v: x[c] for c, v in enumerate(scm.coords)})
    lhs4, rhs4, observed = cache[pkey]

    query = CounterfactualQuery((d,), observed=observed, action=Action.copy(V) if V else None)
    lhs5 = interventional_counterfactual(scm, query).marginal(d, 1)
    rhs5 = factual_expectation(scm, e, V)

    if V:
        _, probs = scm.error_states(V)
        table = _backtrack_table(scm, backtrack, cache)[0]
        bt5 = math.fsum(probs * table[_world_indices(scm, e, V, backtrack, cache)])
    else:
        bt5 = rhs4
    diffs = [abs(lhs4 - rhs4), abs(lhs5 - rhs5), abs(rhs5 - bt5)]
    return {
        "e": [float(v) for v in e],
        "V": V,
        "lhs4": lhs4,
        "rhs4": rhs4,
        "lhs5": lhs5,
        "rhs5": rhs5,
        "bt5": float(bt5),
        "max_abs_diff": float(max(diffs)),
    }


def verify_patient(scm: Scm, e, tolerance: float = 1e-12, _cache=None) -> dict:
    """Equivalence report for one patient across every subset ``V``."""
    p = scm.p
    cache = {} if _cache is None else _cache
    eq5 = [verify_equivalence(scm, e, V, cache) for r in range(p + 1) for V in itertools.combinations(range(p), r)]
    first = eq5[0]
    eq4 = {"lhs": first["lhs4"], "rhs": first["rhs4"], "diff": abs(first["lhs4"] - first["rhs4"])}
    worst = max(r["max_abs_diff"] for r in eq5)
    return {
        "e": first["e"],
        "eq4": eq4,
        "eq5": [{"V": r["V"], "lhs": r["lhs5"], "rhs": r["rhs5"], "backtracking": r["bt5"],
                 "diff": max(abs(r["lhs5"] - r["rhs5"]), abs(r["rhs5"] - r["bt5"]))} for r in eq5],
        "max_abs_diff": worst,
        "pass": bool(worst < tolerance),
        "tolerance": tolerance,
    }


def verify_model(scm: Scm, tolerance: float = 1e-12) -> dict:
    """Equivalence reports for every patient with positive probability."""
    states, probs = scm.error_states()
    cache = {}
    patients = [verify_patient(scm, s, tolerance, cache) for s, q in zip(states, probs) if q > 0]
    worst = max(r["max_abs_diff"] for r in patients)
    return {"patients": patients, "max_abs_diff": worst, "pass": bool(worst < tolerance), "tolerance": tolerance}
