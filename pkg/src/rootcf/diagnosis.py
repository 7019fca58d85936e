"""Predictive models of ``P(D=1 | E)`` and their conditional expectations.

Two kinds of model are supported. ``logistic`` is fitted from error rows and
labels by damped Newton iterations. ``exact-synthetic`` wraps a structural
model whose label mechanism is known, so ``P(D=1 | e)`` is evaluated by
pushing ``e`` through the mechanisms.

Conditional expectations ``E_{E_V}[m(P(D | e_W, E_V))]`` marginalise the
coordinates outside ``W``. Error terms are mutually independent, so the
marginalised coordinates are drawn coordinate-wise:

* ``exact``: enumerate the discrete supports of the structural model;
* ``background``: a fixed design whose columns are independent permutations
  of the background rows (common random numbers across subsets);
* ``monte-carlo``: fresh independent draws, ``m`` per coordinate.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, logit

from .errors import ConvergenceError, DegenerateLabelError, UnsupportedModelError
from .scm import Scm

DEFAULT_BACKGROUND = 2048


@dataclass(frozen=True)
class Sampling:
    mode: str = "background"
    m: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("exact", "background", "monte-carlo"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.mode == "monte-carlo" and self.m < 2:
            raise ValueError("monte-carlo sampling needs m >= 2")

    @classmethod
    def monte_carlo(cls, m, seed=0):
        return cls("monte-carlo", int(m), int(seed))


EXACT = Sampling("exact")
BACKGROUND = Sampling("background")


@dataclass(frozen=True, eq=False)
class DiagnosisModel:
    kind: str
    n_coords: int
    intercept: float = 0.0
    weights: Optional[np.ndarray] = None
    scm: Optional[Scm] = None
    background: Optional[np.ndarray] = None
    logit_offset: float = 0.0
    shuffle_seed: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "logistic":
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.n_coords,):
                raise ValueError("logistic weights must have one entry per coordinate")
            object.__setattr__(self, "weights", w)
        elif self.kind == "exact-synthetic":
            if self.scm is None or not self.scm.has_label:
                raise ValueError("exact-synthetic models wrap a structural model with a diagnosis vertex")
        else:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.background is not None:
            bg = np.asarray(self.background, dtype=float)
            if bg.ndim != 2 or bg.shape[1] != self.n_coords:
                raise ValueError("background rows must have one column per coordinate")
            object.__setattr__(self, "background", bg)

    def shifted(self, c: float) -> "DiagnosisModel":
        """Same model with every log-odds moved by ``c`` (a change of disease prevalence)."""
        return replace(self, logit_offset=self.logit_offset + float(c))

    def with_background(self, rows, seed: int = 0) -> "DiagnosisModel":
        return replace(self, background=np.asarray(rows, dtype=float), shuffle_seed=seed)

    @property
    def design(self) -> np.ndarray:
        """Background rows with each column independently permuted."""
        cached = self.__dict__.get("_design")
        if cached is None:
            if self.background is None or len(self.background) == 0:
                raise ValueError("model has no background rows")
            rng = np.random.default_rng(self.shuffle_seed)
            bg = self.background
            cached = np.column_stack([bg[rng.permutation(len(bg)), j] for j in range(self.n_coords)])
            self.__dict__["_design"] = cached
        return cached

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "n_coords": self.n_coords, "logit_offset": self.logit_offset}
        if self.kind == "logistic":
            d["intercept"] = float(self.intercept)
            d["weights"] = [float(w) for w in self.weights]
        else:
            d["scm"] = self.scm.to_dict()
        d["background"] = {
            "source": self.diagnostics.get("background_source", "supplied"),
            "shuffle_seed": self.shuffle_seed,
            "rows": [] if self.background is None else self.background.tolist(),
        }
        d["diagnostics"] = dict(self.diagnostics)
        return d

    @classmethod
    def from_dict(cls, d) -> "DiagnosisModel":
        bg = d.get("background") or {}
        rows = bg.get("rows") or None
        common = dict(
            n_coords=int(d["n_coords"]),
            background=None if rows is None else np.asarray(rows, dtype=float).reshape(len(rows), int(d["n_coords"])),
            logit_offset=float(d.get("logit_offset", 0.0)),
            shuffle_seed=int(bg.get("shuffle_seed", 0)),
            diagnostics=dict(d.get("diagnostics", {})),
        )
        if d["kind"] == "logistic":
            return cls("logistic", intercept=float(d["intercept"]), weights=np.asarray(d["weights"], dtype=float), **common)
        if d["kind"] == "exact-synthetic":
            return cls("exact-synthetic", scm=Scm.from_dict(d["scm"]), **common)
        raise ValueError(f"unknown model kind {d['kind']!r}")

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def logistic_model(intercept, weights, background=None, shuffle_seed=0) -> DiagnosisModel:
    w = np.asarray(weights, dtype=float)
    return DiagnosisModel("logistic", len(w), float(intercept), w, background=background, shuffle_seed=shuffle_seed)


def exact_model(scm: Scm, background=None, shuffle_seed=0) -> DiagnosisModel:
    """Oracle model reading ``P(D=1 | e)`` straight off the structural model."""
    return DiagnosisModel("exact-synthetic", scm.p, scm=scm, background=background, shuffle_seed=shuffle_seed)


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------

def _objective(beta, A, d, l2, mask):
    z = A @ beta
    # mean negative log-likelihood, stable form
    nll = np.mean(np.logaddexp(0.0, z) - d * z)
    return nll + 0.5 * l2 * np.sum((beta * mask) ** 2)


def fit_logistic(e_hat, d, l2: float = 1e-4, max_iter: int = 100, tol: float = 1e-8,
                 background_size: int = DEFAULT_BACKGROUND, seed: int = 0) -> DiagnosisModel:
    """L2-penalised logistic regression of ``d`` on ``e_hat``.

    Minimises the mean negative log-likelihood plus ``l2/2 * |w|^2`` (the
    intercept is not penalised) with Newton steps and Armijo backtracking.
    Converged when the gradient max-norm drops below ``tol``.
    """
    X = np.asarray(e_hat, dtype=float)
    d = np.asarray(d, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != d.shape[0]:
        raise ValueError("e_hat must be (n, p) with one label per row")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(d)):
        raise ValueError("non-finite entries in the training data")
    if not np.all((d == 0) | (d == 1)):
        raise ValueError("labels must be 0 or 1")
    if d.min() == d.max():
        raise DegenerateLabelError(f"all labels equal {int(d[0])}; need both classes")

    n, p = X.shape
    A = np.column_stack([np.ones(n), X])
    mask = np.r_[0.0, np.ones(p)]
    beta = np.zeros(p + 1)
    prior = d.mean()
    beta[0] = np.log(prior / (1 - prior))
    f = _objective(beta, A, d, l2, mask)
    grad_norm = np.inf
    for it in range(1, max_iter + 1):
        mu = expit(A @ beta)
        grad = A.T @ (mu - d) / n + l2 * mask * beta
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < tol:
            break
        H = (A * (mu * (1 - mu))[:, None]).T @ A / n + np.diag(l2 * mask)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta - t * step
            fc = _objective(cand, A, d, l2, mask)
            if fc <= f - 1e-4 * t * (grad @ step) or t < 1e-10:
                break
            t *= 0.5
        beta, f = cand, fc
    else:
        mu = expit(A @ beta)
        grad = A.T @ (mu - d) / n + l2 * mask * beta
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm >= tol:
            raise ConvergenceError(grad_norm, max_iter)
        it = max_iter

    size = min(n, background_size)
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(n, size=size, replace=False))
    diagnostics = {
        "iterations": it,
        "grad_max_norm": grad_norm,
        "objective": float(f),
        "n": n,
        "l2": l2,
        "positive_rate": float(d.mean()),
        "background_source": f"training-subsample(size={size}, seed={seed})",
    }
    return DiagnosisModel("logistic", p, float(beta[0]), beta[1:].copy(), background=X[rows],
                          shuffle_seed=seed, diagnostics=diagnostics)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def predict_proba(model: DiagnosisModel, e) -> np.ndarray:
    """``P(D=1 | e)`` for one error vector or an ``(m, p)`` batch."""
    e = np.asarray(e, dtype=float)
    if e.shape[-1] != model.n_coords:
        raise ValueError(f"expected {model.n_coords} error coordinates, got {e.shape[-1]}")
    if model.kind == "logistic":
        # column-by-column in a fixed order: a BLAS product may change its summation order with
        # memory alignment, and zero-weight coordinates must not move the result at all
        z = np.full(e.shape[:-1], model.intercept + model.logit_offset)
        for j in np.flatnonzero(model.weights):
            z = z + e[..., j] * model.weights[j]
        return expit(z)
    p = model.scm.proba_from_errors(e)
    if model.logit_offset != 0.0:
        with np.errstate(divide="ignore"):
            p = expit(logit(p) + model.logit_offset)
    return p


def _mask(W, p):
    mask = np.zeros(p, dtype=bool)
    for w in W:
        if not 0 <= int(w) < p:
            raise IndexError(f"coordinate {w} out of range for {p} coordinates")
        mask[int(w)] = True
    return mask


def marginal_rows(model: DiagnosisModel, e, keep: np.ndarray, sampling: Sampling = BACKGROUND):
    """Rows and weights representing ``(e_W, E_V)`` with ``V`` the complement of ``keep``."""
    e = np.asarray(e, dtype=float)
    V = np.flatnonzero(~keep)
    if len(V) == 0:
        return e[None, :], np.ones(1)
    if sampling.mode == "exact":
        if model.kind != "exact-synthetic":
            raise UnsupportedModelError("exact marginalisation needs an exact-synthetic model")
        if not all(model.scm.error_dists[c].is_discrete for c in V):
            raise UnsupportedModelError("exact marginalisation needs discrete error distributions")
        states, probs = model.scm.error_states(tuple(int(c) for c in V))
        rows = np.repeat(e[None, :], len(probs), axis=0)
        rows[:, V] = states
        return rows, probs
    if sampling.mode == "background":
        design = model.design
        rows = design.copy()
        rows[:, keep] = e[keep]
        return rows, np.full(len(rows), 1.0 / len(rows))
    rng = np.random.default_rng(sampling.seed)
    rows = np.repeat(e[None, :], sampling.m, axis=0)
    for c in V:
        if model.kind == "exact-synthetic":
            rows[:, c] = model.scm.error_dists[c].sample(rng, sampling.m)
        else:
            if model.background is None or len(model.background) == 0:
                raise ValueError("monte-carlo sampling of a fitted model draws from its background rows")
            rows[:, c] = model.background[rng.integers(len(model.background), size=sampling.m), c]
    return rows, np.full(sampling.m, 1.0 / sampling.m)


def conditional_expectation(model: DiagnosisModel, e, W, sampling: Sampling = BACKGROUND,
                            transform: Optional[Callable] = None, return_stderr: bool = False):
    """``E_{E_V}[m(P(D=1 | e_W, E_V))]`` with ``V`` the coordinates outside ``W``.

    ``transform`` (``m``) is applied inside the expectation; identity by default.
    """
    e = np.asarray(e, dtype=float)
    if e.shape != (model.n_coords,):
        raise ValueError(f"expected {model.n_coords} error coordinates")
    keep = _mask(W, model.n_coords)
    rows, weights = marginal_rows(model, e, keep, sampling)
    vals = predict_proba(model, rows)
    if transform is not None:
        vals = transform(vals)
    mean = math.fsum(weights * vals)
    if not return_stderr:
        return mean
    if sampling.mode == "monte-carlo" and keep.sum() < model.n_coords:
        se = float(np.std(vals, ddof=1) / np.sqrt(len(vals)))
    else:
        se = 0.0
    return mean, se
