"""Root-causal effect scores and per-coordinate Shapley contributions.

For a patient ``e`` and a retained coordinate set ``W`` the subset value is
``v(W) = E_{E_V}[m(P(D | e_W, E_V))]``. Everything here is built from it:

* effect score of a set ``V``: ``v(all) - v(complement of V)``
* marginal gain of ``i`` given ``W``: ``v(W + i) - v(W)``
* Shapley value ``s_i``: weighted average of the marginal gains over ``W``

Subsets are encoded as bitmasks, coordinate ``i`` being bit ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import comb
from typing import Optional, Sequence

import numpy as np

from .diagnosis import BACKGROUND, DiagnosisModel, Sampling, marginal_rows, predict_proba

EXACT_THRESHOLD = 12


@dataclass(frozen=True)
class Transform:
    """Strictly monotone map applied to probabilities; log and logit clamp to ``[eps, 1-eps]``."""

    kind: str = "identity"
    eps: float = 1e-9

    def __post_init__(self):
        if self.kind not in ("identity", "log", "logit"):
            raise ValueError(f"unknown transform {self.kind!r}")
        if not 0 < self.eps < 0.5:
            raise ValueError("clamp epsilon must lie in (0, 0.5)")

    def __call__(self, prob):
        prob = np.asarray(prob, dtype=float)
        if self.kind == "identity":
            return prob
        c = np.clip(prob, self.eps, 1.0 - self.eps)
        if self.kind == "log":
            return np.log(c)
        return np.log(c) - np.log1p(-c)


IDENTITY = Transform("identity")
LOG = Transform("log")
LOGIT = Transform("logit")


@dataclass
class EffectScore:
    value: float
    subset: tuple
    patient_id: Optional[str] = None
    transform: str = "identity"


@dataclass
class AttributionResult:
    s: np.ndarray
    phi_total: float
    transform: str
    estimator: dict
    stderr: Optional[np.ndarray] = None
    model_fingerprint: str = ""
    patient_id: Optional[str] = None

    def ranked(self) -> list:
        """Coordinates by descending score, ties by ascending index."""
        return sorted(range(len(self.s)), key=lambda i: (-self.s[i], i))

    def root_causes(self, tau: float = 0.0) -> list:
        return [i for i in self.ranked() if self.s[i] > tau]

    def to_dict(self, names: Optional[Sequence[str]] = None, tau: float = 0.0) -> dict:
        label = (lambda i: names[i]) if names is not None else (lambda i: i)
        se = None if self.stderr is None else [None if not np.isfinite(v) else float(v) for v in self.stderr]
        return {
            "patient_id": self.patient_id,
            "s": [float(v) for v in self.s],
            "phi_total": float(self.phi_total),
            "transform": self.transform,
            "estimator": self.estimator,
            "stderr": se,
            "ranked_causes": [label(i) for i in self.ranked()],
            "root_causes": [label(i) for i in self.root_causes(tau)],
            "model_fingerprint": self.model_fingerprint,
        }


class SubsetValues:
    """Memoised ``v(W)`` for one patient, model, transform and sampling scheme."""

    def __init__(self, model: DiagnosisModel, e, transform: Transform = IDENTITY, sampling: Sampling = BACKGROUND):
        self.model = model
        self.e = np.asarray(e, dtype=float)
        if self.e.shape != (model.n_coords,):
            raise ValueError(f"expected {model.n_coords} error coordinates, got shape {self.e.shape}")
        self.transform = transform
        self.sampling = sampling
        self.p = model.n_coords
        self.full = (1 << self.p) - 1
        self._cache = {}

    def mask_of(self, W) -> int:
        mask = 0
        for w in W:
            w = int(w)
            if not 0 <= w < self.p:
                raise IndexError(f"coordinate {w} out of range for {self.p} coordinates")
            mask |= 1 << w
        return mask

    def __call__(self, mask: int) -> float:
        v = self._cache.get(mask)
        if v is None:
            keep = np.array([(mask >> i) & 1 for i in range(self.p)], dtype=bool)
            rows, weights = marginal_rows(self.model, self.e, keep, self.sampling)
            # exactly rounded sum: BLAS dot products are not reproducible to the last bit
            v = math.fsum(weights * self.transform(predict_proba(self.model, rows)))
            self._cache[mask] = v
        return v

    def all_values(self) -> np.ndarray:
        return np.array([self(mask) for mask in range(1 << self.p)])


def _complement(V, p):
    V = {int(v) for v in V}
    for v in V:
        if not 0 <= v < p:
            raise IndexError(f"coordinate {v} out of range for {p} coordinates")
    return [w for w in range(p) if w not in V]


def effect_score(model: DiagnosisModel, e, V, m: Transform = IDENTITY, sampling: Sampling = BACKGROUND,
                 patient_id=None) -> EffectScore:
    """``m[P(D|e)] - E_{E_V} m[P(D | e_W, E_V)]``: the patient against a typical person."""
    values = SubsetValues(model, e, m, sampling)
    W = _complement(V, model.n_coords)
    value = values(values.full) - values(values.mask_of(W))
    return EffectScore(float(value), tuple(sorted(int(v) for v in V)), patient_id, m.kind)


def marginal_gain(model: DiagnosisModel, e, W, i: int, m: Transform = IDENTITY, sampling: Sampling = BACKGROUND) -> float:
    """Gain in the subset value from also retaining the patient's value of coordinate ``i``."""
    W = [int(w) for w in W]
    if int(i) in W:
        raise ValueError(f"coordinate {i} is already retained")
    values = SubsetValues(model, e, m, sampling)
    base = values.mask_of(W)
    return values(base | values.mask_of([i])) - values(base)


def _popcounts(p):
    masks = np.arange(1 << p)
    return np.array([bin(int(k)).count("1") for k in masks])


def shapley_from_values(v: np.ndarray, p: int) -> np.ndarray:
    """Exact Shapley values from the full table of subset values."""
    masks = np.arange(1 << p)
    size = _popcounts(p)
    weight = np.array([1.0 / (p * comb(p - 1, k)) if k < p else 0.0 for k in range(p + 1)])
    s = np.empty(p)
    for i in range(p):
        without = masks[(masks >> i) & 1 == 0]
        s[i] = np.sum(weight[size[without]] * (v[without | (1 << i)] - v[without]))
    return s


def shapley_exact(model: DiagnosisModel, e, m: Transform = IDENTITY, sampling: Sampling = BACKGROUND,
                  patient_id=None) -> AttributionResult:
    """Shapley vector by enumerating every subset (each subset value computed once)."""
    p = model.n_coords
    if p > EXACT_THRESHOLD:
        raise ValueError(f"{p} coordinates exceeds the exact threshold of {EXACT_THRESHOLD}; use shapley_sampled")
    values = SubsetValues(model, e, m, sampling)
    v = values.all_values()
    s = shapley_from_values(v, p)
    phi = v[values.full] - v[0]
    return AttributionResult(s, float(phi), m.kind, {"kind": "exact", "sampling": sampling.mode},
                             np.zeros(p), model.fingerprint(), patient_id)


def shapley_sampled(model: DiagnosisModel, e, m: Transform = IDENTITY, permutations: int = 64, seed: int = 0,
                    sampling: Sampling = BACKGROUND, patient_id=None) -> AttributionResult:
    """Antithetic permutation estimate of the Shapley vector.

    Each sampled permutation is paired with its reverse; pairs use disjoint
    seed streams. Standard errors are computed over pair averages. Any
    residual between ``sum(s)`` and the total score is spread over the
    coordinates in proportion to their standard errors (reported as
    ``estimator["residual"]``).
    """
    if permutations < 2:
        raise ValueError("need at least 2 permutations")
    p = model.n_coords
    values = SubsetValues(model, e, m, sampling)
    n_pairs = -(-permutations // 2)
    streams = np.random.SeedSequence(seed).spawn(n_pairs)
    pair_est = np.empty((n_pairs, p))
    for k, stream in enumerate(streams):
        perm = np.random.default_rng(stream).permutation(p)
        contrib = np.zeros(p)
        for order in (perm, perm[::-1]):
            mask = 0
            prev = values(0)
            for j in order:
                mask |= 1 << int(j)
                cur = values(mask)
                contrib[j] += cur - prev
                prev = cur
        pair_est[k] = contrib / 2.0
    s = pair_est.mean(axis=0)
    if n_pairs > 1:
        se = pair_est.std(axis=0, ddof=1) / np.sqrt(n_pairs)
    else:
        se = np.full(p, np.nan)
    phi = values(values.full) - values(0)
    residual = float(s.sum() - phi)
    if residual != 0.0:
        share = se if np.all(np.isfinite(se)) and se.sum() > 0 else np.ones(p)
        s = s - residual * share / share.sum()
    estimator = {"kind": "sampled", "permutations": 2 * n_pairs, "seed": int(seed), "sampling": sampling.mode,
                 "residual": residual, "adjusted": residual != 0.0}
    return AttributionResult(s, float(phi), m.kind, estimator, se, model.fingerprint(), patient_id)


def attribute(model: DiagnosisModel, e, m: Transform = IDENTITY, estimator: str = "exact", permutations: int = 64,
              seed: int = 0, sampling: Sampling = BACKGROUND, patient_id=None) -> AttributionResult:
    if estimator == "exact":
        return shapley_exact(model, e, m, sampling, patient_id)
    if estimator == "sampled":
        return shapley_sampled(model, e, m, permutations, seed, sampling, patient_id)
    raise ValueError(f"unknown estimator {estimator!r}")


def prevalence_shift_check(model: DiagnosisModel, e, c: float, m: Transform = LOGIT,
                           sampling: Sampling = BACKGROUND) -> dict:
    """Compare Shapley vectors before and after shifting every log-odds by ``c``.

    Under the logit transform the shift adds ``c`` to every subset value and
    cancels in each marginal gain; other transforms are reported as is.
    """
    base = shapley_exact(model, e, m, sampling)
    shifted = shapley_exact(model.shifted(c), e, m, sampling)
    return {
        "c": float(c),
        "transform": m.kind,
        "invariance_expected": m.kind == "logit",
        "s": base.s.tolist(),
        "s_shifted": shifted.s.tolist(),
        "max_abs_diff": float(np.max(np.abs(base.s - shifted.s))),
        "phi_total_diff": float(abs(base.phi_total - shifted.phi_total)),
    }
