"""Synthetic detection benchmarks with injected root causes.

A scenario draws a random structural model, a training sample and a set of
"patients". Each patient has one designated error coordinate pushed to
``magnitude`` standard deviations above its mean; every other coordinate is an
ordinary draw from its marginal. Detection is scored by where the designated
coordinate lands in the patient's Shapley ranking.

Two pipelines are compared on the same scenario:

* estimated: extract ``e_hat`` from observed data, fit a logistic model, attribute;
* oracle: true errors and the exact label mechanism of the generating model.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .attribution import Transform, attribute
from .diagnosis import BACKGROUND, EXACT, DEFAULT_BACKGROUND, exact_model, fit_logistic
from .errors import ConfigError, PipelineError, RootCauseError
from .extraction import ExtractionConfig, fit_extractor, rmse
from .graph import CausalGraph, ancestors
from .models import FIGURE1_EDGES, FIGURE1_LABELS, random_additive_scm, random_discrete_scm, random_linear_scm
from .scm import Dataset, ErrorDistribution, Mechanism, Scm, sample

log = logging.getLogger(__name__)

FAMILIES = ("linear-laplace", "additive-tanh", "discrete-binary")
MAX_RETRIES = 1000


@dataclass(frozen=True)
class ScenarioConfig:
    p: int = 5
    edge_prob: float = 0.4
    family: str = "linear-laplace"
    weight_range: tuple = (0.5, 1.0)
    # "balanced": every error has the same total effect on the log-odds (linear only);
    # "random": label weights drawn from label_range; "auto": balanced when linear with every variable feeding D
    label: str = "auto"
    label_scale: float = 1.0
    label_range: tuple = (0.5, 1.5)
    label_parents: str = "all"  # "all", "sinks" or "random"
    intercept: float = 0.0
    noise_sd: float = 1.0
    target: Union[str, int] = "random-ancestor"  # or "non-ancestor", or a fixed coordinate index
    magnitude: float = 4.0
    n_train: int = 20000
    n_patients: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.p < 2:
            raise ConfigError("scenarios need p >= 2")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown mechanism family {self.family!r}")
        if not self.magnitude > 0:
            raise ConfigError("injection magnitude must be positive")
        if not 0 <= self.edge_prob <= 1:
            raise ConfigError("edge probability must lie in [0, 1]")
        if self.label not in ("auto", "balanced", "random"):
            raise ConfigError(f"unknown label policy {self.label!r}")
        if self.label_parents not in ("all", "sinks", "random"):
            raise ConfigError(f"unknown label-parent policy {self.label_parents!r}")
        if isinstance(self.target, str):
            if self.target not in ("random-ancestor", "non-ancestor"):
                raise ConfigError(f"unknown target policy {self.target!r}")
        elif not 0 <= int(self.target) < self.p:
            raise ConfigError(f"target coordinate {self.target} out of range")
        if self.n_train < 2 or self.n_patients < 1:
            raise ConfigError("need n_train >= 2 and n_patients >= 1")
        if self.noise_sd <= 0:
            raise ConfigError("noise_sd must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    extraction: Optional[ExtractionConfig] = None  # None picks top-down for linear families, bottom-up otherwise
    transform: str = "logit"
    estimator: str = "exact"
    permutations: int = 64
    l2: float = 1e-4
    background_size: int = DEFAULT_BACKGROUND
    top_k: int = 2
    tau: float = 0.0


@dataclass
class Patients:
    e: np.ndarray
    x: np.ndarray
    target: np.ndarray


@dataclass
class Scenario:
    config: ScenarioConfig
    scm: Scm
    train: Dataset
    patients: Patients
    eligible: tuple


@dataclass
class PipelineScore:
    top1: float
    topk: float
    mrr: float
    mean_target_score: float
    ranks: list = field(default_factory=list)


@dataclass
class DetectionReport:
    estimated: PipelineScore
    oracle: PipelineScore
    rmse_train: list
    rmse_patients: list
    score_gap_mean: float
    score_gap_max: float
    n_patients: int
    top_k: int
    seed: int
    per_patient: list = field(default_factory=list, repr=False)

    def to_dict(self, include_patients: bool = False) -> dict:
        d = asdict(self)
        if not include_patients:
            d.pop("per_patient")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _laplace_sd(sd):
    return ErrorDistribution.laplace(0.0, sd / np.sqrt(2.0))


def _edge_matrix(scm: Scm) -> np.ndarray:
    """``B[i, j]`` is the weight of parent ``j`` in the linear mechanism of ``i``."""
    p = scm.p
    B = np.zeros((p, p))
    for v in range(p):
        mech = scm.mechanisms[v]
        if mech.kind == "linear":
            for u, w in zip(scm.graph.parents(v), mech.params):
                B[v, u] = w
    return B


def _balanced_label(scm: Scm, scale: float, intercept: float) -> Scm:
    """Rewrite label weights so each error has total log-odds effect ``scale`` per standard deviation.

    With ``x = B x + e`` and logit ``a + b.x``, the total effect vector is
    ``(I - B)^{-T} b``; setting it to ``scale / sd`` gives ``b = (I - B)^T c``.
    """
    g = scm.graph
    p = scm.p
    if set(g.parents(g.diagnosis_index)) != set(range(p)):
        raise ConfigError("balanced labels need every variable as a parent of the diagnosis")
    sd = np.array([d.std for d in scm.error_dists])
    c = scale / sd
    b = (np.eye(p) - _edge_matrix(scm)).T @ c
    mechs = scm.mechanisms[:p] + (Mechanism.logistic_label(intercept, b),)
    return Scm(g, mechs, scm.error_dists)


def _draw_scm(cfg: ScenarioConfig, rng: np.random.Generator) -> Scm:
    parents = cfg.label_parents
    balanced = cfg.label == "balanced" or (cfg.label == "auto" and cfg.family == "linear-laplace" and parents == "all")
    if balanced and parents != "all":
        raise ConfigError("balanced labels need label_parents = 'all'")
    if cfg.family == "linear-laplace":
        scm = random_linear_scm(cfg.p, rng, cfg.edge_prob, "laplace", cfg.noise_sd / np.sqrt(2.0), cfg.weight_range,
                                signed=False, label_range=cfg.label_range, intercept=cfg.intercept,
                                label_parents=_parents_arg(parents, cfg.p))
        if balanced:
            scm = _balanced_label(scm, cfg.label_scale, cfg.intercept)
        return scm
    if balanced:
        raise ConfigError("balanced labels are only defined for the linear-laplace family")
    if cfg.family == "additive-tanh":
        return random_additive_scm(cfg.p, rng, cfg.edge_prob, "laplace", cfg.noise_sd / np.sqrt(2.0), cfg.weight_range,
                                   label_range=cfg.label_range, intercept=cfg.intercept,
                                   label_parents=_parents_arg(parents, cfg.p))
    return random_discrete_scm(cfg.p, rng, cfg.edge_prob, weight_range=cfg.weight_range,
                               label_range=cfg.label_range, label_parents=_parents_arg(parents, cfg.p))


def _parents_arg(policy, p):
    return list(range(p)) if policy == "all" else policy


def _eligible(scm: Scm, cfg: ScenarioConfig) -> tuple:
    anc = ancestors(scm.graph, scm.graph.diagnosis_index)
    coords = range(scm.p)
    if cfg.target == "random-ancestor":
        return tuple(c for c in coords if c in anc)
    if cfg.target == "non-ancestor":
        return tuple(c for c in coords if c not in anc)
    t = int(cfg.target)
    return (t,) if t in anc else ()


def _inject_value(dist: ErrorDistribution, magnitude: float) -> float:
    if dist.is_discrete:
        # the support point furthest above the mean stands in for an extreme value
        values, _ = dist.support()
        return float(np.max(values))
    return dist.mean + magnitude * dist.std


def generate_scenario(cfg: ScenarioConfig, scm: Optional[Scm] = None) -> Scenario:
    """Draw (or take) a model, a training sample and injected patients; deterministic in ``cfg.seed``."""
    seq = np.random.SeedSequence(cfg.seed)
    model_seq, train_seq, patient_seq = seq.spawn(3)
    if scm is None:
        rng = np.random.default_rng(model_seq)
        for _ in range(MAX_RETRIES):
            scm = _draw_scm(cfg, rng)
            eligible = _eligible(scm, cfg)
            if eligible:
                break
        else:
            raise ConfigError(f"no graph with an eligible target coordinate after {MAX_RETRIES} draws")
    else:
        eligible = _eligible(scm, cfg)
        if not eligible:
            raise ConfigError("the supplied model has no eligible target coordinate")
    train = sample(scm, cfg.n_train, int(train_seq.generate_state(1)[0]))
    rng = np.random.default_rng(patient_seq)
    e = np.column_stack([d.sample(rng, cfg.n_patients) for d in scm.error_dists])
    target = rng.choice(np.asarray(eligible), size=cfg.n_patients)
    for t in eligible:
        e[target == t, t] = _inject_value(scm.error_dists[t], cfg.magnitude)
    patients = Patients(e, scm.push_forward(e), target)
    return Scenario(cfg, scm, train, patients, tuple(int(t) for t in eligible))


def figure1_scenario(n_train: int = 20000, n_patients: int = 200, magnitude: float = 4.0, seed: int = 0,
                     noise_sd: float = 1.0) -> Scenario:
    """Spouse loss X1 -> depression X3 <- family history X2, X3 -> alcohol X4 -> D; injection at X1."""
    graph = CausalGraph(5, FIGURE1_EDGES, labels=FIGURE1_LABELS, diagnosis_index=4)
    mechs = (Mechanism.root(), Mechanism.root(), Mechanism.linear((1.0, 1.0)), Mechanism.linear((1.0,)),
             Mechanism.logistic_label(0.0, (1.0,)))
    scm = Scm(graph, mechs, tuple(_laplace_sd(noise_sd) for _ in range(4)))
    cfg = ScenarioConfig(p=4, label_parents="sinks", target=0, magnitude=magnitude, n_train=n_train,
                         n_patients=n_patients, seed=seed, noise_sd=noise_sd)
    return generate_scenario(cfg, scm)


def _default_extraction(family: str) -> ExtractionConfig:
    if family == "additive-tanh":
        return ExtractionConfig("bottomup-additive", degree=1)
    return ExtractionConfig("topdown-linear")


def _score(results, targets, top_k) -> PipelineScore:
    ranks = []
    scores = []
    for res, t in zip(results, targets):
        ranks.append(res.ranked().index(int(t)) + 1)
        scores.append(res.s[int(t)])
    ranks_a = np.asarray(ranks)
    return PipelineScore(
        top1=float(np.mean(ranks_a == 1)),
        topk=float(np.mean(ranks_a <= top_k)),
        mrr=float(np.mean(1.0 / ranks_a)),
        mean_target_score=float(np.mean(scores)),
        ranks=[int(r) for r in ranks],
    )


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (RootCauseError, ValueError, np.linalg.LinAlgError) as exc:
        raise PipelineError(name, exc) from exc


def run_detection(scenario: Scenario, pipeline: PipelineConfig = PipelineConfig()) -> DetectionReport:
    """Score both pipelines on one scenario."""
    cfg = scenario.config
    scm, train, patients = scenario.scm, scenario.train, scenario.patients
    m = Transform(pipeline.transform)
    ext_cfg = pipeline.extraction or _default_extraction(cfg.family)

    extractor, extracted = _stage("extract", fit_extractor, train.x, scm.graph, ext_cfg)
    model = _stage("fit", fit_logistic, extracted.e_hat, train.d, l2=pipeline.l2,
                   background_size=pipeline.background_size, seed=cfg.seed)
    e_hat = _stage("extract", extractor.transform, patients.x)

    rows = np.sort(np.random.default_rng(cfg.seed).choice(len(train.e), min(len(train.e), pipeline.background_size),
                                                           replace=False))
    oracle = exact_model(scm, background=train.e[rows], shuffle_seed=cfg.seed)
    oracle_sampling = EXACT if scm.is_discrete else BACKGROUND

    def run(i):
        kw = dict(estimator=pipeline.estimator, permutations=pipeline.permutations, seed=cfg.seed + i)
        est = attribute(model, e_hat[i], m, sampling=BACKGROUND, patient_id=str(i), **kw)
        orc = attribute(oracle, patients.e[i], m, sampling=oracle_sampling, patient_id=str(i), **kw)
        return est, orc

    pairs = [_stage("attribute", run, i) for i in range(len(patients.e))]
    est_results = [a for a, _ in pairs]
    orc_results = [b for _, b in pairs]
    gaps = np.array([np.max(np.abs(a.s - b.s)) for a, b in pairs])
    per_patient = [{
        "patient_id": i,
        "target": int(patients.target[i]),
        "s_estimated": [float(v) for v in a.s],
        "s_oracle": [float(v) for v in b.s],
    } for i, (a, b) in enumerate(pairs)]
    top_k = min(pipeline.top_k, scm.p)
    return DetectionReport(
        estimated=_score(est_results, patients.target, top_k),
        oracle=_score(orc_results, patients.target, top_k),
        rmse_train=[float(v) for v in rmse(extracted.e_hat, train.e)],
        rmse_patients=[float(v) for v in rmse(e_hat, patients.e)],
        score_gap_mean=float(gaps.mean()),
        score_gap_max=float(gaps.max()),
        n_patients=len(patients.e),
        top_k=top_k,
        seed=cfg.seed,
        per_patient=per_patient,
    )


def run_bench(cfg: ScenarioConfig, pipeline: PipelineConfig = PipelineConfig(), repeats: int = 1,
              threads: int = 1) -> dict:
    """Repeat a scenario under derived seeds and aggregate in seed order."""
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(repeats)] \
        if repeats > 1 else [cfg.seed]

    def one(seed):
        log.info("bench repetition seed=%d", seed)
        return run_detection(generate_scenario(replace(cfg, seed=seed)), pipeline)

    workers = max(1, threads)
    if workers == 1:
        reports = [one(s) for s in seeds]
    else:
        with ThreadPoolExecutor(workers) as pool:
            reports = list(pool.map(one, seeds))
    est = np.array([r.estimated.top1 for r in reports])
    orc = np.array([r.oracle.top1 for r in reports])
    se = (lambda a: float(a.std(ddof=1) / np.sqrt(len(a))) if len(a) > 1 else 0.0)
    return {
        "reports": reports,
        "summary": {
            "repeats": repeats,
            "top1_estimated_mean": float(est.mean()),
            "top1_estimated_se": se(est),
            "top1_oracle_mean": float(orc.mean()),
            "top1_oracle_se": se(orc),
        },
    }

