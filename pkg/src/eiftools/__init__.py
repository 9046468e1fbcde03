"""Doubly robust estimation of treatment-free outcome means.

Implements the plug-in (g-computation), one-step/AIPW, and targeted
maximum likelihood estimators of E(Y^0) for a binary point treatment,
the two-time-point sequential TMLE of E(Y^{0,0}), the offset/weight GLM
machinery their targeting steps need, pluggable nuisance learners with
optional cross-fitting, and a simulation harness with known-truth
oracles.
"""

from .data import Dataset, LongDataset
from .glm import (DesignSpec, GlmError, GlmFit, Link, NonConvergenceError,
                  SeparationError, SingularDesignError, fit_glm, predict,
                  score_residuals)
from .nuisance import (DEFAULT_TRUNCATION, FoldDegeneracyError,
                       InsufficientDataError, LearnerSpec, NuisanceError,
                       NuisanceEstimates, crossfit, fit_nuisance, fit_outcome,
                       fit_propensity)
from .estimators import (TMLE_VARIANTS, Z975, DegenerateOutcomeError,
                         EstimateResult, FluctuationFit, eif_values, gcomp,
                         one_step, tmle, wald_inference)
from .longitudinal import (LONG_VARIANTS, LongEstimateResult,
                           SequentialNuisances, eif_long,
                           fit_sequential_nuisances, one_step_long, tmle_long,
                           tmle_long_weighted_logistic)
from .simulation import (DgpConfig, DgpValidationError, EstimationPlan,
                         ExperimentReport, TruthResult, generate,
                         run_experiment, true_value)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "LongDataset",
    "DesignSpec",
    "GlmError",
    "GlmFit",
    "Link",
    "NonConvergenceError",
    "SeparationError",
    "SingularDesignError",
    "fit_glm",
    "predict",
    "score_residuals",
    "DEFAULT_TRUNCATION",
    "FoldDegeneracyError",
    "InsufficientDataError",
    "LearnerSpec",
    "NuisanceError",
    "NuisanceEstimates",
    "crossfit",
    "fit_nuisance",
    "fit_outcome",
    "fit_propensity",
    "TMLE_VARIANTS",
    "Z975",
    "DegenerateOutcomeError",
    "EstimateResult",
    "FluctuationFit",
    "eif_values",
    "gcomp",
    "one_step",
    "tmle",
    "wald_inference",
    "LONG_VARIANTS",
    "LongEstimateResult",
    "SequentialNuisances",
    "eif_long",
    "fit_sequential_nuisances",
    "one_step_long",
    "tmle_long",
    "tmle_long_weighted_logistic",
    "DgpConfig",
    "DgpValidationError",
    "EstimationPlan",
    "ExperimentReport",
    "TruthResult",
    "generate",
    "run_experiment",
    "true_value",
    "__version__",
]
