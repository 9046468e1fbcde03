"""Point-treatment estimators of the untreated mean E(Y^0).

All estimators target psi = E(E(Y | A=0, W)) and share one influence
function:

    phi_i = I(A_i=0)/g_i * (Y_i - mu_i) + mu_i - psi,

where mu_i estimates E(Y | A=0, W_i) and g_i estimates P(A=0 | W_i).

``gcomp`` averages mu_i. ``one_step`` adds the empirical mean of the
influence function. ``tmle`` first replaces mu with a targeted version
mu* chosen by a one-parameter maximum-likelihood fluctuation so that the
inverse-probability score sum(H_i * (Y_i - mu*_i)) is zero, then averages
mu*. Three fluctuations are implemented; the weighted logistic one keeps
mu* and psi inside the outcome bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import expit, logit

from .data import Dataset
from .glm import DesignSpec, GlmError, Link, fit_glm
from .nuisance import NuisanceEstimates

__all__ = [
    "TMLE_VARIANTS",
    "Z975",
    "EstimateResult",
    "FluctuationFit",
    "DegenerateOutcomeError",
    "eif_values",
    "wald_inference",
    "gcomp",
    "one_step",
    "tmle",
]

# Standard-normal 97.5% quantile used for all Wald intervals.
Z975 = 1.959964

TMLE_VARIANTS = ("covariate_linear", "weighted_linear", "weighted_logistic")

# Scaled initial predictions are clipped here before logit().
_SCALED_PRED_CLIP = 1e-6


class DegenerateOutcomeError(Exception):
    """Outcome bounds collapse to a point; logistic targeting is undefined."""


@dataclass(frozen=True)
class FluctuationFit:
    """One solved targeting model.

    ``coefficient`` is the fluctuation parameter (delta for the covariate
    variant, gamma for the weighted ones); ``targeted_pred`` is mu*;
    ``score_residual`` is the targeting score sum at the solution (on the
    scaled outcome for the logistic variant).
    """

    variant: str
    coefficient: float
    targeted_pred: np.ndarray
    score_residual: float


@dataclass
class EstimateResult:
    """Point estimate with influence-function-based Wald inference."""

    estimator: str
    psi_hat: float
    se: float
    ci95: Tuple[float, float]
    eif: np.ndarray
    diagnostics: Dict[str, object] = field(default_factory=dict)
    fluctuation: Optional[FluctuationFit] = None

    def to_json_dict(self) -> Dict[str, object]:
        """JSON-ready summary (drops the per-observation vectors)."""
        return {
            "estimator": self.estimator,
            "psi_hat": self.psi_hat,
            "se": self.se,
            "ci95": [self.ci95[0], self.ci95[1]],
            "diagnostics": dict(self.diagnostics),
        }


def eif_values(data: Dataset, outcome_pred, propensity_pred,
               psi: float) -> np.ndarray:
    """Influence-function values phi_i at the given nuisances and psi."""
    mu = np.asarray(outcome_pred, dtype=float)
    g = np.asarray(propensity_pred, dtype=float)
    if mu.shape != (data.n_obs,) or g.shape != (data.n_obs,):
        raise ValueError("nuisance predictions must have one value per row")
    if np.any(g <= 0.0) or np.any(g >= 1.0):
        raise ValueError("propensity predictions must lie strictly in (0, 1)")
    h = (data.treatment == 0.0).astype(float) / g
    return h * (data.outcome - mu) + mu - float(psi)


def wald_inference(eif: np.ndarray, psi_hat: float
                   ) -> Tuple[float, Tuple[float, float]]:
    """Standard error and 95% CI from the influence-function values.

    se = sqrt(sample variance (n-1 divisor) of the values / n).
    """
    phi = np.asarray(eif, dtype=float)
    n = phi.shape[0]
    if n < 2:
        raise ValueError("influence-function inference needs n >= 2")
    se = float(np.sqrt(np.var(phi, ddof=1) / n))
    return se, (psi_hat - Z975 * se, psi_hat + Z975 * se)


def _clever_covariate(data: Dataset, nuisance: NuisanceEstimates) -> np.ndarray:
    if nuisance.n_obs != data.n_obs:
        raise ValueError("nuisance estimates do not match the dataset size")
    return (data.treatment == 0.0).astype(float) / nuisance.propensity_pred


def _result(estimator: str, data: Dataset, mu_for_eif: np.ndarray,
            nuisance: NuisanceEstimates, psi: float,
            extra: Optional[Dict[str, object]] = None,
            fluctuation: Optional[FluctuationFit] = None) -> EstimateResult:
    phi = eif_values(data, mu_for_eif, nuisance.propensity_pred, psi)
    se, ci = wald_inference(phi, psi)
    diagnostics: Dict[str, object] = {
        "mean_eif": float(np.mean(phi)),
        "n_truncated": nuisance.n_truncated,
        "outcome_learner": nuisance.outcome_learner,
        "propensity_learner": nuisance.propensity_learner,
        "cross_fitted": nuisance.fold_assignment is not None,
    }
    if extra:
        diagnostics.update(extra)
    return EstimateResult(estimator=estimator, psi_hat=psi, se=se, ci95=ci,
                          eif=phi, diagnostics=diagnostics,
                          fluctuation=fluctuation)


def gcomp(data: Dataset, nuisance: NuisanceEstimates) -> EstimateResult:
    """Plug-in estimator: the mean of the outcome-model predictions.

    The reported standard error evaluates the influence function at the
    plug-in solution. With data-adaptive nuisance learners this interval
    has no general validity guarantee; the caveat is flagged in
    diagnostics.
    """
    if nuisance.n_obs != data.n_obs:
        raise ValueError("nuisance estimates do not match the dataset size")
    psi = float(np.mean(nuisance.outcome_pred))
    return _result(
        "gcomp", data, nuisance.outcome_pred, nuisance, psi,
        extra={"inference_caveat":
               "plug-in estimator; influence-function interval is not "
               "theoretically valid with data-adaptive nuisance learners"},
    )


def one_step(data: Dataset, nuisance: NuisanceEstimates) -> EstimateResult:
    """One-step (AIPW) estimator: plug-in plus the mean influence function.

    psi_hat = mean( H_i (Y_i - mu_i) + mu_i ) with H_i = I(A_i=0)/g_i.
    The influence function for inference is evaluated at the plug-in
    nuisances and this psi_hat, where its mean is zero by construction.
    """
    h = _clever_covariate(data, nuisance)
    mu = nuisance.outcome_pred
    psi = float(np.mean(h * (data.outcome - mu) + mu))
    return _result("one_step", data, mu, nuisance, psi)


def _fluctuate(data: Dataset, nuisance: NuisanceEstimates, variant: str,
               y_bounds: Optional[Tuple[float, float]]) -> FluctuationFit:
    h = _clever_covariate(data, nuisance)
    mu = nuisance.outcome_pred
    y = data.outcome
    n = data.n_obs

    if variant == "covariate_linear":
        # No-intercept linear model of Y on H with offset mu: the score of
        # the single slope is sum(H (Y - mu - delta H)) = 0. Treated rows
        # are inert in the fit (H = 0), but the targeted prediction must
        # evaluate the fluctuation under the untreated regime, where the
        # clever covariate is 1/g for every row; using H there instead
        # shrinks the correction and forfeits double robustness.
        design = DesignSpec.from_columns({"clever_covariate": h},
                                         include_intercept=False)
        fit = fit_glm(design, y, Link.IDENTITY, offset=mu)
        delta = float(fit.coefficients[0])
        mu_star = mu + delta / nuisance.propensity_pred
        resid = float(np.sum(h * (y - mu_star)))
        return FluctuationFit(variant, delta, mu_star, resid)

    if variant == "weighted_linear":
        # Intercept-only linear model, offset mu, weights H: the intercept
        # score is sum(H (Y - mu - gamma)) = 0.
        design = DesignSpec.intercept_only(n)
        fit = fit_glm(design, y, Link.IDENTITY, offset=mu, weights=h)
        gamma = float(fit.coefficients[0])
        mu_star = mu + gamma
        resid = float(np.sum(h * (y - mu_star)))
        return FluctuationFit(variant, gamma, mu_star, resid)

    if variant == "weighted_logistic":
        lo, hi = y_bounds if y_bounds is not None else data.outcome_bounds()
        if not hi > lo:
            raise DegenerateOutcomeError(
                f"outcome bounds ({lo}, {hi}) have zero width; logistic "
                "targeting needs y_min < y_max"
            )
        if np.any(y < lo) or np.any(y > hi):
            raise ValueError("outcome values fall outside the scaling bounds")
        span = hi - lo
        y_sc = (y - lo) / span
        mu_sc = np.clip((mu - lo) / span, _SCALED_PRED_CLIP,
                        1.0 - _SCALED_PRED_CLIP)
        offset = logit(mu_sc)
        design = DesignSpec.intercept_only(n)
        fit = fit_glm(design, y_sc, Link.LOGIT, offset=offset, weights=h)
        gamma = float(fit.coefficients[0])
        targeted_sc = expit(offset + gamma)
        mu_star = lo + span * targeted_sc
        resid = float(np.sum(h * (y_sc - targeted_sc)))
        return FluctuationFit(variant, gamma, mu_star, resid)

    raise ValueError(f"unknown TMLE variant {variant!r}; "
                     f"expected one of {TMLE_VARIANTS}")


def tmle(data: Dataset, nuisance: NuisanceEstimates, variant: str,
         y_bounds: Optional[Tuple[float, float]] = None) -> EstimateResult:
    """Targeted maximum likelihood estimator of the untreated mean.

    Parameters
    ----------
    data : Dataset
    nuisance : NuisanceEstimates
        Initial outcome and (truncated) propensity predictions.
    variant : str
        ``covariate_linear``: no-intercept linear fluctuation with the
        clever covariate H as regressor and mu as offset.
        ``weighted_linear``: intercept-only linear fluctuation with
        offset mu, weighted by H.
        ``weighted_logistic``: intercept-only logistic fluctuation on the
        [0, 1]-rescaled outcome, weighted by H; keeps the targeted
        predictions and psi_hat inside the outcome bounds.
    y_bounds : (float, float), optional
        Scaling bounds for ``weighted_logistic``; default is the
        dataset's declared or observed outcome range.

    Returns
    -------
    EstimateResult
        psi_hat = mean(mu*), influence function evaluated at
        (mu*, psi_hat), targeting diagnostics attached.

    Raises
    ------
    DegenerateOutcomeError
        ``weighted_logistic`` with y_min = y_max.
    GlmError
        Targeting-model failure, annotated with the variant.
    """
    if nuisance.n_obs != data.n_obs:
        raise ValueError("nuisance estimates do not match the dataset size")
    try:
        fluct = _fluctuate(data, nuisance, variant, y_bounds)
    except GlmError as exc:
        exc.args = (f"targeting step ({variant}): {exc.args[0]}",) + exc.args[1:]
        raise
    psi = float(np.mean(fluct.targeted_pred))
    h = _clever_covariate(data, nuisance)
    return _result(
        f"tmle_{variant}", data, fluct.targeted_pred, nuisance, psi,
        extra={
            "variant": variant,
            "fluctuation_coefficient": fluct.coefficient,
            "score_residual": fluct.score_residual,
            "score_scale": float(1.0 + np.sum(h)),
            "targeted_pred_min": float(np.min(fluct.targeted_pred)),
            "targeted_pred_max": float(np.max(fluct.targeted_pred)),
        },
        fluctuation=fluct,
    )
