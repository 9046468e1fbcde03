"""Nuisance-function estimation: outcome regressions and propensity scores.

Learners are deliberately simple (GLMs with optional basis expansion, and
k-nearest-neighbors); the point is pluggability and determinism, not
predictive power. Outcome models condition on the untreated subset
(``A == 0``) because that is the only regression the target mean needs.
Propensity models predict ``P(A = 0 | W)`` and are truncated into a
positivity interval.

Cross-fitting splits the sample into seeded folds and gives each
observation predictions from models that never saw its fold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset
from .glm import (DesignSpec, GlmFit, Link, fit_glm, predict)

__all__ = [
    "LearnerSpec",
    "NuisanceEstimates",
    "OutcomeFit",
    "PropensityFit",
    "NuisanceError",
    "InsufficientDataError",
    "FoldDegeneracyError",
    "fit_outcome",
    "fit_propensity",
    "fit_nuisance",
    "crossfit",
    "DEFAULT_TRUNCATION",
]

DEFAULT_TRUNCATION = (0.01, 0.99)

# Probability-scale outcome predictions are clipped here so that
# logit(prediction) stays finite for the logistic targeting model.
OUTCOME_PROB_CLIP = 1e-6

GLM_KINDS = ("glm_main_terms", "glm_with_basis")
LEARNER_KINDS = GLM_KINDS + ("k_nearest_neighbors",)


class NuisanceError(Exception):
    """Base class for nuisance-fitting failures."""


class InsufficientDataError(NuisanceError):
    """Too few observations in the required stratum to fit a model."""


class FoldDegeneracyError(NuisanceError):
    """A cross-fitting fold's training complement cannot support the fits."""


@dataclass(frozen=True)
class LearnerSpec:
    """Configuration of one nuisance learner.

    Parameters
    ----------
    kind : str
        ``glm_main_terms``, ``glm_with_basis``, or ``k_nearest_neighbors``.
    link : Link
        Scale of a GLM outcome model. ``identity`` regresses the raw
        outcome; ``logit`` regresses the outcome rescaled into [0, 1].
        Ignored by kNN; propensity models always use ``logit``.
    degree : int
        Polynomial degree for ``glm_with_basis``.
    interactions : bool
        Add pairwise products for ``glm_with_basis``.
    k : int, optional
        Neighbor count for ``k_nearest_neighbors``.
    """

    kind: str
    link: Link = Link.IDENTITY
    degree: int = 1
    interactions: bool = False
    k: Optional[int] = None

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValueError(
                f"unknown learner kind {self.kind!r}; expected one of {LEARNER_KINDS}"
            )
        object.__setattr__(self, "link", Link(self.link))
        if self.kind == "glm_with_basis":
            if int(self.degree) < 1:
                raise ValueError("glm_with_basis needs degree >= 1")
            object.__setattr__(self, "degree", int(self.degree))
        if self.kind == "k_nearest_neighbors":
            if self.k is None or int(self.k) < 1:
                raise ValueError("k_nearest_neighbors needs k >= 1")
            object.__setattr__(self, "k", int(self.k))

    @classmethod
    def parse(cls, text: str) -> "LearnerSpec":
        """Parse a CLI-style learner string.

        Examples: ``glm_main_terms``, ``glm_main_terms:link=logit``,
        ``glm_with_basis:degree=2,interactions=true``,
        ``k_nearest_neighbors:k=25``.
        """
        head, _, tail = text.strip().partition(":")
        kwargs: Dict[str, object] = {}
        if tail:
            for item in tail.split(","):
                key, sep, value = item.partition("=")
                key = key.strip()
                value = value.strip()
                if not sep or not key or not value:
                    raise ValueError(f"malformed learner option {item!r}")
                if key in ("degree", "k"):
                    kwargs[key] = int(value)
                elif key == "interactions":
                    if value.lower() not in ("true", "false"):
                        raise ValueError(
                            f"interactions must be true or false, got {value!r}")
                    kwargs[key] = value.lower() == "true"
                elif key == "link":
                    kwargs[key] = Link(value)
                else:
                    raise ValueError(f"unknown learner option {key!r}")
        return cls(kind=head, **kwargs)

    def describe(self) -> str:
        """Canonical string form; ``parse(describe())`` round-trips."""
        parts = []
        if self.kind == "glm_with_basis":
            parts.append(f"degree={self.degree}")
            parts.append(f"interactions={'true' if self.interactions else 'false'}")
        if self.kind == "k_nearest_neighbors":
            parts.append(f"k={self.k}")
        if self.kind in GLM_KINDS and self.link is not Link.IDENTITY:
            parts.append(f"link={self.link.value}")
        if parts:
            return f"{self.kind}:{','.join(parts)}"
        return self.kind

    def design_for(self, names: Sequence[str], matrix: np.ndarray) -> DesignSpec:
        """Expand raw covariates into this learner's GLM design."""
        if self.kind not in GLM_KINDS:
            raise ValueError(f"{self.kind} has no GLM design")
        cols = []
        names = tuple(names)
        for j, name in enumerate(names):
            cols.append((name, matrix[:, j]))
            if self.kind == "glm_with_basis":
                for d in range(2, self.degree + 1):
                    cols.append((f"{name}^{d}", matrix[:, j] ** d))
        if self.kind == "glm_with_basis" and self.interactions:
            for i in range(len(names)):
                for j in range(i + 1, len(names)):
                    cols.append((f"{names[i]}:{names[j]}",
                                 matrix[:, i] * matrix[:, j]))
        if not cols:
            return DesignSpec.intercept_only(matrix.shape[0])
        return DesignSpec.from_columns(cols, include_intercept=True)


class _GlmPredictor:
    """GLM fit plus the recipe to rebuild its design on new covariates."""

    def __init__(self, learner: LearnerSpec, covariate_names: Tuple[str, ...],
                 fit: GlmFit, link: Link):
        self.learner = learner
        self.covariate_names = covariate_names
        self.fit = fit
        self.link = link

    def predict(self, matrix: np.ndarray) -> np.ndarray:
        design = self.learner.design_for(self.covariate_names, matrix)
        return predict(self.fit, design)


class _KnnPredictor:
    """k-nearest-neighbor mean with deterministic tie handling.

    Distances are Euclidean on per-column standardized covariates
    (training mean/scale; constant columns get scale 1). Ties are broken
    by lowest training-row index via a stable argsort.
    """

    def __init__(self, k: int, train_x: np.ndarray, train_z: np.ndarray):
        self.k = k
        self.center = train_x.mean(axis=0) if train_x.shape[1] else np.zeros(0)
        scale = train_x.std(axis=0) if train_x.shape[1] else np.zeros(0)
        self.scale = np.where(scale > 0, scale, 1.0)
        self.train_x = (train_x - self.center) / self.scale
        self.train_z = train_z

    def predict(self, matrix: np.ndarray) -> np.ndarray:
        x = (matrix - self.center) / self.scale
        out = np.empty(matrix.shape[0])
        for i in range(matrix.shape[0]):
            d2 = np.sum((self.train_x - x[i]) ** 2, axis=1)
            nearest = np.argsort(d2, kind="stable")[: self.k]
            out[i] = float(np.mean(self.train_z[nearest]))
        return out


class _ConstantPredictor:
    def __init__(self, value: float):
        self.value = value

    def predict(self, matrix: np.ndarray) -> np.ndarray:
        return np.full(matrix.shape[0], self.value)


@dataclass
class OutcomeFit:
    """Fitted outcome regression Ê(Y | A=0, W) with full-sample predictions."""

    learner: LearnerSpec
    predictions: np.ndarray
    n_fit: int
    _predictor: object
    _bounds: Optional[Tuple[float, float]]

    def predict(self, matrix: np.ndarray) -> np.ndarray:
        raw = self._predictor.predict(np.asarray(matrix, dtype=float))
        if self._bounds is None:
            return raw
        lo, hi = self._bounds
        p = np.clip(raw, OUTCOME_PROB_CLIP, 1.0 - OUTCOME_PROB_CLIP)
        return lo + (hi - lo) * p


@dataclass
class PropensityFit:
    """Fitted propensity model P̂(A = 0 | W), truncated into ``truncation``."""

    learner: LearnerSpec
    predictions: np.ndarray
    truncation: Tuple[float, float]
    n_truncated: int
    _predictor: object

    def predict(self, matrix: np.ndarray) -> np.ndarray:
        raw = self._predictor.predict(np.asarray(matrix, dtype=float))
        return np.clip(raw, self.truncation[0], self.truncation[1])


@dataclass(frozen=True)
class NuisanceEstimates:
    """Per-observation nuisance predictions feeding the estimators.

    ``outcome_pred[i]`` estimates E(Y | A=0, W_i) and ``propensity_pred[i]``
    estimates P(A=0 | W_i), already truncated into ``truncation_bounds``.
    When ``fold_assignment`` is present, row ``i``'s predictions come from
    models fit without fold ``fold_assignment[i]``.
    """

    outcome_pred: np.ndarray
    propensity_pred: np.ndarray
    truncation_bounds: Tuple[float, float] = DEFAULT_TRUNCATION
    fold_assignment: Optional[np.ndarray] = None
    n_truncated: int = 0
    outcome_learner: Optional[str] = None
    propensity_learner: Optional[str] = None

    def __post_init__(self):
        mu = np.asarray(self.outcome_pred, dtype=float)
        g = np.asarray(self.propensity_pred, dtype=float)
        if mu.ndim != 1 or g.shape != mu.shape:
            raise ValueError("outcome_pred and propensity_pred must be "
                             "1-d arrays of equal length")
        if not np.all(np.isfinite(mu)):
            raise ValueError("outcome predictions contain non-finite values")
        lo, hi = self.truncation_bounds
        if not (0.0 < lo < hi < 1.0):
            raise ValueError(f"truncation bounds ({lo}, {hi}) must satisfy "
                             "0 < lo < hi < 1")
        if np.any(g < lo) or np.any(g > hi):
            raise ValueError("propensity predictions violate the truncation bounds")
        fa = self.fold_assignment
        if fa is not None:
            fa = np.asarray(fa, dtype=int)
            if fa.shape != mu.shape:
                raise ValueError("fold_assignment length mismatch")
        object.__setattr__(self, "outcome_pred", mu)
        object.__setattr__(self, "propensity_pred", g)
        object.__setattr__(self, "fold_assignment", fa)

    @property
    def n_obs(self) -> int:
        return self.outcome_pred.shape[0]


def _validate_truncation(truncation) -> Tuple[float, float]:
    lo, hi = float(truncation[0]), float(truncation[1])
    if not (0.0 < lo < hi < 1.0):
        raise ValueError(f"truncation bounds ({lo}, {hi}) must satisfy 0 < lo < hi < 1")
    return lo, hi


def _restrict(data: Dataset, covariates: Optional[Sequence[str]]) -> Dataset:
    if covariates is None:
        return data
    return data.select_covariates(covariates)


def fit_outcome(data: Dataset, learner: LearnerSpec,
                covariates: Optional[Sequence[str]] = None) -> OutcomeFit:
    """Fit Ê(Y | A=0, W) on the untreated subset; predict for every row.

    Parameters
    ----------
    data : Dataset
    learner : LearnerSpec
        GLM learners regress Y on the expanded design; with
        ``link=logit`` the response is first rescaled into [0, 1] using
        the dataset's outcome bounds and predictions are mapped back.
        kNN averages the outcomes of the k nearest untreated neighbors.
    covariates : sequence of str, optional
        Restrict the model to these columns (used to force deliberate
        misspecification in simulations). Predictions still cover all rows.

    Raises
    ------
    InsufficientDataError
        Fewer than 2 untreated observations.
    """
    data = _restrict(data, covariates)
    untreated = data.treatment == 0.0
    if int(untreated.sum()) < 2:
        raise InsufficientDataError(
            f"need at least 2 untreated observations, found {int(untreated.sum())}"
        )
    x_fit = data.covariates[untreated]
    y_fit = data.outcome[untreated]

    if learner.kind == "k_nearest_neighbors":
        if learner.k > x_fit.shape[0]:
            raise InsufficientDataError(
                f"k={learner.k} exceeds the {x_fit.shape[0]} untreated observations"
            )
        predictor: object = _KnnPredictor(learner.k, x_fit, y_fit)
        bounds = None
    elif learner.link is Link.LOGIT:
        lo, hi = data.outcome_bounds()
        if hi <= lo:
            # Constant outcome: the scaled response is undefined, but the
            # regression it stands in for is the constant itself.
            predictor = _ConstantPredictor(lo)
            bounds = None
        else:
            z = (y_fit - lo) / (hi - lo)
            design = learner.design_for(data.covariate_names, x_fit)
            fit = fit_glm(design, z, Link.LOGIT)
            predictor = _GlmPredictor(learner, data.covariate_names, fit, Link.LOGIT)
            bounds = (lo, hi)
    else:
        design = learner.design_for(data.covariate_names, x_fit)
        fit = fit_glm(design, y_fit, Link.IDENTITY)
        predictor = _GlmPredictor(learner, data.covariate_names, fit, Link.IDENTITY)
        bounds = None

    out = OutcomeFit(learner=learner, predictions=np.empty(0),
                     n_fit=int(untreated.sum()), _predictor=predictor,
                     _bounds=bounds)
    out.predictions = out.predict(data.covariates)
    return out


def fit_propensity(data: Dataset, learner: LearnerSpec,
                   truncation: Tuple[float, float] = DEFAULT_TRUNCATION,
                   covariates: Optional[Sequence[str]] = None) -> PropensityFit:
    """Fit P̂(A = 0 | W) on all rows and truncate predictions.

    GLM learners model the untreated indicator with a logit link
    (regardless of the learner's declared outcome link); kNN averages the
    indicator over neighbors. Raw predictions are clipped into
    ``truncation`` and the number of clipped rows is recorded.

    Raises
    ------
    InsufficientDataError
        Only one treatment level present.
    """
    lo, hi = _validate_truncation(truncation)
    data = _restrict(data, covariates)
    z = (data.treatment == 0.0).astype(float)
    if len(np.unique(data.treatment)) < 2:
        raise InsufficientDataError(
            "both treatment levels are required to fit a propensity model"
        )
    if learner.kind == "k_nearest_neighbors":
        if learner.k > data.n_obs:
            raise InsufficientDataError(
                f"k={learner.k} exceeds the {data.n_obs} observations"
            )
        predictor: object = _KnnPredictor(learner.k, data.covariates, z)
    else:
        design = learner.design_for(data.covariate_names, data.covariates)
        fit = fit_glm(design, z, Link.LOGIT)
        predictor = _GlmPredictor(learner, data.covariate_names, fit, Link.LOGIT)

    raw = predictor.predict(data.covariates)
    n_trunc = int(np.sum((raw < lo) | (raw > hi)))
    return PropensityFit(learner=learner,
                         predictions=np.clip(raw, lo, hi),
                         truncation=(lo, hi),
                         n_truncated=n_trunc,
                         _predictor=predictor)


def fit_nuisance(data: Dataset, outcome_learner: LearnerSpec,
                 propensity_learner: LearnerSpec,
                 truncation: Tuple[float, float] = DEFAULT_TRUNCATION,
                 outcome_covariates: Optional[Sequence[str]] = None,
                 propensity_covariates: Optional[Sequence[str]] = None,
                 ) -> NuisanceEstimates:
    """Fit both nuisances on the full sample (no cross-fitting)."""
    out = fit_outcome(data, outcome_learner, covariates=outcome_covariates)
    prop = fit_propensity(data, propensity_learner, truncation,
                          covariates=propensity_covariates)
    return NuisanceEstimates(
        outcome_pred=out.predictions,
        propensity_pred=prop.predictions,
        truncation_bounds=prop.truncation,
        fold_assignment=None,
        n_truncated=prop.n_truncated,
        outcome_learner=outcome_learner.describe(),
        propensity_learner=propensity_learner.describe(),
    )


def fold_partition(n_obs: int, n_folds: int, seed: int) -> np.ndarray:
    """Seeded near-equal fold assignment; returns fold index per row."""
    if not (2 <= n_folds <= n_obs):
        raise ValueError(f"fold count {n_folds} must be in [2, {n_obs}]")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_obs)
    assignment = np.empty(n_obs, dtype=int)
    for fold, rows in enumerate(np.array_split(order, n_folds)):
        assignment[rows] = fold
    return assignment


def crossfit(data: Dataset, outcome_learner: LearnerSpec,
             propensity_learner: LearnerSpec, n_folds: int, seed: int,
             truncation: Tuple[float, float] = DEFAULT_TRUNCATION,
             outcome_covariates: Optional[Sequence[str]] = None,
             propensity_covariates: Optional[Sequence[str]] = None,
             ) -> NuisanceEstimates:
    """Cross-fitted nuisance estimates.

    The sample is split into ``n_folds`` seeded, near-equal folds. For
    each fold, both models are fit on the complement and predict that
    fold's rows, so no observation's prediction depends on its own fold.

    Raises
    ------
    FoldDegeneracyError
        Some fold's training complement lacks a treatment level or has
        fewer than 2 untreated rows; the message names the fold.
    """
    lo, hi = _validate_truncation(truncation)
    assignment = fold_partition(data.n_obs, n_folds, seed)
    outcome_pred = np.empty(data.n_obs)
    propensity_pred = np.empty(data.n_obs)
    n_truncated = 0
    for fold in range(n_folds):
        held_out = assignment == fold
        train = data.subset(~held_out)
        if len(np.unique(train.treatment)) < 2:
            raise FoldDegeneracyError(
                f"fold {fold}: training complement has a single treatment level"
            )
        if int(np.sum(train.treatment == 0.0)) < 2:
            raise FoldDegeneracyError(
                f"fold {fold}: training complement has fewer than 2 untreated rows"
            )
        try:
            out = fit_outcome(train, outcome_learner,
                              covariates=outcome_covariates)
            prop = fit_propensity(train, propensity_learner, (lo, hi),
                                  covariates=propensity_covariates)
        except InsufficientDataError as exc:
            raise FoldDegeneracyError(f"fold {fold}: {exc}") from exc
        x_out = _restrict(data, outcome_covariates).covariates[held_out]
        x_prop = _restrict(data, propensity_covariates).covariates[held_out]
        outcome_pred[held_out] = out.predict(x_out)
        raw = prop._predictor.predict(x_prop)
        n_truncated += int(np.sum((raw < lo) | (raw > hi)))
        propensity_pred[held_out] = np.clip(raw, lo, hi)
    return NuisanceEstimates(
        outcome_pred=outcome_pred,
        propensity_pred=propensity_pred,
        truncation_bounds=(lo, hi),
        fold_assignment=assignment,
        n_truncated=n_truncated,
        outcome_learner=outcome_learner.describe(),
        propensity_learner=propensity_learner.describe(),
    )
