"""Patient-specific root causes of disease from structural causal models.

The package is organised as a pipeline: structural models and counterfactuals
(:mod:`rootcf.scm`, :mod:`rootcf.counterfactual`), error recovery
(:mod:`rootcf.extraction`), predictive models of the diagnosis
(:mod:`rootcf.diagnosis`), Shapley attribution (:mod:`rootcf.attribution`) and
synthetic benchmarks (:mod:`rootcf.bench`).
"""

__version__ = "0.1.0"

from .attribution import (AttributionResult, EffectScore, IDENTITY, LOG, LOGIT, Transform, attribute,
                          effect_score, marginal_gain, prevalence_shift_check, shapley_exact, shapley_sampled)
from .counterfactual import (Action, BacktrackingKernel, CounterfactualQuery, Distribution,
                             backtracking_counterfactual, do_submodel, interventional_counterfactual,
                             verify_equivalence, verify_model)
from .diagnosis import (BACKGROUND, EXACT, DiagnosisModel, Sampling, conditional_expectation, exact_model,
                        fit_logistic, logistic_model, predict_proba)
from .errors import (ConfigError, ConvergenceError, CycleError, DegenerateLabelError, InconsistentEvidenceError,
                     KernelValidationError, PipelineError, RootCauseError, SingularFitError, StructuralError,
                     UnsupportedModelError)
from .extraction import (ExtractedErrors, ExtractionConfig, extract_bottomup_additive, extract_topdown_linear)
from .graph import CausalGraph, ancestors, d_separated, random_dag, topo_order
from .models import figure1_scm, or_model
from .scm import Dataset, ErrorDistribution, Mechanism, Scm, invert, push_forward, sample

from importlib import resources as _resources
from types import ModuleType as _ModuleType


def bundled(name: str) -> str:
    """Path of a model file shipped with the package (``or_model.json``, ``figure1.json``)."""
    return str(_resources.files(__name__) / "data" / name)


__all__ = [n for n, v in list(globals().items()) if not n.startswith("_") and not isinstance(v, _ModuleType)]
