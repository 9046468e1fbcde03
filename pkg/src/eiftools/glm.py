"""Maximum-likelihood fitting of canonical-link GLMs with offsets and weights.

Two links are supported: identity (weighted least squares, solved in closed
form) and logit (Newton iteration with step-halving). Both solvers drive the
per-parameter score sums

    sum_i wt_i * f_j(X_i) * (Z_i - Zhat_i)

to zero, which is what the targeting models in :mod:`eiftools.estimators`
and :mod:`eiftools.longitudinal` rely on. Convergence is certified on the
score scale: a fit is converged when every score sum is within
``score_tolerance * (1 + sum(weights))`` of zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

__all__ = [
    "Link",
    "DesignSpec",
    "GlmFit",
    "GlmError",
    "SingularDesignError",
    "SeparationError",
    "NonConvergenceError",
    "fit_glm",
    "predict",
    "score_residuals",
]

# Coefficient norm (logit scale) beyond which the logit solver declares
# complete separation instead of returning a huge, meaningless estimate.
SEPARATION_NORM = 1e3

DEFAULT_SCORE_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 100

# Logit-link predictions are kept strictly inside (0, 1).
_PROB_EPS = 1e-15


class Link(str, Enum):
    """Canonical link: identity for linear models, logit for logistic."""

    IDENTITY = "identity"
    LOGIT = "logit"


class GlmError(Exception):
    """Base class for GLM fitting failures."""


class SingularDesignError(GlmError):
    """Design matrix is rank deficient (after weighting)."""


class SeparationError(GlmError):
    """Logit coefficients diverged; data are (quasi-)separated."""


class NonConvergenceError(GlmError):
    """Solver hit the iteration cap before the score equations were solved."""

    def __init__(self, message: str, coefficients: np.ndarray,
                 score_residuals: np.ndarray, iterations: int):
        super().__init__(message)
        self.coefficients = coefficients
        self.score_residuals = score_residuals
        self.iterations = iterations


@dataclass(frozen=True)
class DesignSpec:
    """Named covariate columns plus an optional intercept.

    Parameters
    ----------
    names : tuple of str
        One name per covariate column.
    matrix : ndarray, shape (n, len(names))
        Covariate values; may have zero columns for an intercept-only model.
    include_intercept : bool
        Prepend a constant-one column when expanding to the model matrix.
    """

    names: Tuple[str, ...]
    matrix: np.ndarray
    include_intercept: bool = True

    def __post_init__(self):
        names = tuple(str(v) for v in self.names)
        mat = np.asarray(self.matrix, dtype=float)
        if mat.ndim == 1:
            mat = mat[:, None]
        if mat.ndim != 2:
            raise ValueError("design matrix must be 2-dimensional")
        if mat.shape[1] != len(names):
            raise ValueError(
                f"{len(names)} column names for {mat.shape[1]} columns"
            )
        if len(set(names)) != len(names):
            raise ValueError("design column names must be unique")
        if not np.all(np.isfinite(mat)):
            raise ValueError("design matrix contains non-finite values")
        if not self.include_intercept:
            # Without an intercept the model needs at least one column that
            # is not identically zero, otherwise there is nothing to fit.
            if mat.shape[1] == 0 or not np.any(mat != 0.0):
                raise ValueError(
                    "design has no effective parameters: no intercept and "
                    "no nonzero column"
                )
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def from_columns(cls, columns: Union[Mapping[str, Sequence[float]],
                                         Sequence[Tuple[str, Sequence[float]]]],
                     include_intercept: bool = True) -> "DesignSpec":
        """Build a design from named 1-D columns (insertion order kept)."""
        if isinstance(columns, Mapping):
            items = list(columns.items())
        else:
            items = list(columns)
        if not items:
            raise ValueError("from_columns needs at least one column; "
                             "use intercept_only() for an empty design")
        names = tuple(name for name, _ in items)
        matrix = np.column_stack([np.asarray(v, dtype=float) for _, v in items])
        return cls(names=names, matrix=matrix, include_intercept=include_intercept)

    @classmethod
    def intercept_only(cls, n_obs: int) -> "DesignSpec":
        """Design holding only the intercept for ``n_obs`` observations."""
        return cls(names=(), matrix=np.empty((n_obs, 0)), include_intercept=True)

    @property
    def n_obs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_params(self) -> int:
        return self.matrix.shape[1] + (1 if self.include_intercept else 0)

    @property
    def param_names(self) -> Tuple[str, ...]:
        if self.include_intercept:
            return ("(intercept)",) + self.names
        return self.names

    def expanded(self) -> np.ndarray:
        """Model matrix with the intercept column prepended when requested."""
        if self.include_intercept:
            return np.column_stack([np.ones(self.n_obs), self.matrix])
        return self.matrix


@dataclass
class GlmFit:
    """A solved (or attempted) maximum-likelihood fit.

    ``score_residuals`` holds the per-parameter score sums at
    ``coefficients``; when ``converged`` their largest magnitude is at most
    ``score_tolerance * (1 + sum(weights))``.
    """

    coefficients: np.ndarray
    converged: bool
    iterations: int
    score_residuals: np.ndarray
    link: Link
    design_names: Tuple[str, ...] = ()
    include_intercept: bool = True

    @property
    def param_names(self) -> Tuple[str, ...]:
        if self.include_intercept:
            return ("(intercept)",) + self.design_names
        return self.design_names


def _validate_vectors(design: DesignSpec, response, offset, weights,
                      link: Link):
    n = design.n_obs
    if n < 1:
        raise ValueError("need at least one observation")
    z = np.asarray(response, dtype=float)
    if z.shape != (n,):
        raise ValueError(f"response has shape {z.shape}, expected ({n},)")
    if offset is None:
        b = np.zeros(n)
    else:
        b = np.asarray(offset, dtype=float)
        if b.shape != (n,):
            raise ValueError(f"offset has shape {b.shape}, expected ({n},)")
    if weights is None:
        wt = np.ones(n)
    else:
        wt = np.asarray(weights, dtype=float)
        if wt.shape != (n,):
            raise ValueError(f"weights have shape {wt.shape}, expected ({n},)")
        if np.any(wt < 0):
            raise ValueError("weights must be nonnegative")
        if not np.any(wt > 0):
            raise ValueError("at least one weight must be strictly positive")
    for name, v in (("response", z), ("offset", b), ("weights", wt)):
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{name} contains non-finite values")
    if link is Link.LOGIT:
        if np.any((z < 0) | (z > 1)):
            raise ValueError("logit link requires response values in [0, 1]")
    return z, b, wt


def _inverse_link(eta: np.ndarray, link: Link) -> np.ndarray:
    if link is Link.IDENTITY:
        return eta
    return expit(eta)


def _score(X: np.ndarray, z: np.ndarray, mu: np.ndarray,
           wt: np.ndarray) -> np.ndarray:
    return X.T @ (wt * (z - mu))


def _bernoulli_loglik(eta: np.ndarray, z: np.ndarray, wt: np.ndarray) -> float:
    # log(mu) = -log(1 + exp(-eta)), log(1 - mu) = -log(1 + exp(eta));
    # evaluated only where wt > 0 so saturated zero-weight rows cannot
    # produce 0 * inf.
    active = wt > 0
    e = eta[active]
    zz = z[active]
    ww = wt[active]
    log_mu = -np.logaddexp(0.0, -e)
    log_1m = -np.logaddexp(0.0, e)
    return float(np.sum(ww * (zz * log_mu + (1.0 - zz) * log_1m)))


def _fit_identity(X, z, b, wt, tol_abs, max_iterations):
    n, p = X.shape
    sw = np.sqrt(wt)
    Xw = X * sw[:, None]
    target = (z - b) * sw
    beta, _, rank, _ = np.linalg.lstsq(Xw, target, rcond=None)
    if rank < p:
        raise SingularDesignError(
            f"identity-link design is rank deficient (rank {rank} < {p})"
        )
    iterations = 1
    # One round of iterative refinement if rounding left the score sums
    # above tolerance (can happen with badly scaled covariates).
    for _ in range(3):
        score = _score(X, z, b + X @ beta, wt)
        if np.max(np.abs(score)) <= tol_abs:
            break
        delta, _, _, _ = np.linalg.lstsq(Xw, (z - b - X @ beta) * sw, rcond=None)
        beta = beta + delta
        iterations += 1
    score = _score(X, z, b + X @ beta, wt)
    if np.max(np.abs(score)) > tol_abs:
        raise NonConvergenceError(
            "weighted least squares did not reach the score tolerance",
            beta, score, iterations,
        )
    return beta, score, iterations


def _fit_logit(X, z, b, wt, tol_abs, max_iterations):
    n, p = X.shape
    beta = np.zeros(p)
    eta = b + X @ beta
    loglik = _bernoulli_loglik(eta, z, wt)
    score = _score(X, z, expit(eta), wt)
    for iteration in range(max_iterations):
        if np.max(np.abs(score)) <= tol_abs:
            return beta, score, iteration
        mu = expit(eta)
        info = X.T @ (X * (wt * mu * (1.0 - mu))[:, None])
        try:
            delta = cho_solve(cho_factor(info), score)
        except np.linalg.LinAlgError as exc:
            raise SingularDesignError(
                "logit-link information matrix is singular"
            ) from exc
        if not np.all(np.isfinite(delta)):
            raise SingularDesignError(
                "logit-link Newton step is not finite"
            )
        # Step-halving: accept the largest step that does not decrease
        # the (weighted Bernoulli) log-likelihood.
        step = 1.0
        for _ in range(40):
            cand = beta + step * delta
            eta_cand = b + X @ cand
            loglik_cand = _bernoulli_loglik(eta_cand, z, wt)
            if loglik_cand >= loglik - 1e-12 * (1.0 + abs(loglik)):
                break
            step *= 0.5
        beta, eta, loglik = cand, eta_cand, loglik_cand
        if np.max(np.abs(beta)) > SEPARATION_NORM:
            raise SeparationError(
                "logit coefficients diverged beyond "
                f"{SEPARATION_NORM:g}; data look separated"
            )
        score = _score(X, z, expit(eta), wt)
    if np.max(np.abs(score)) <= tol_abs:
        return beta, score, max_iterations
    raise NonConvergenceError(
        f"logit fit did not converge in {max_iterations} iterations",
        beta, score, max_iterations,
    )


def fit_glm(design: DesignSpec, response, link: Link,
            offset=None, weights=None, *,
            score_tolerance: float = DEFAULT_SCORE_TOLERANCE,
            max_iterations: int = DEFAULT_MAX_ITERATIONS) -> GlmFit:
    """Fit a canonical-link GLM by maximum likelihood.

    Parameters
    ----------
    design : DesignSpec
        Covariate columns and intercept flag.
    response : array-like, shape (n,)
        Outcome ``Z``; must lie in [0, 1] for the logit link.
    link : Link
        ``Link.IDENTITY`` (closed-form weighted least squares) or
        ``Link.LOGIT`` (Newton iteration with step-halving).
    offset : array-like, optional
        Per-observation term with fixed coefficient 1 on the link scale.
    weights : array-like, optional
        Nonnegative per-observation weights; zero-weight rows do not enter
        the score sums.
    score_tolerance : float
        Relative score tolerance; convergence means every score sum is
        within ``score_tolerance * (1 + sum(weights))`` of zero.
    max_iterations : int
        Iteration cap for the logit solver.

    Returns
    -------
    GlmFit

    Raises
    ------
    SingularDesignError
        Rank-deficient design (or singular information matrix).
    SeparationError
        Logit coefficients diverged (complete separation).
    NonConvergenceError
        Iteration cap reached; carries the last iterate and its score sums.
    """
    link = Link(link)
    z, b, wt = _validate_vectors(design, response, offset, weights, link)
    X = design.expanded()
    tol_abs = score_tolerance * (1.0 + float(np.sum(wt)))
    if link is Link.IDENTITY:
        beta, score, iterations = _fit_identity(
            X, z, b, wt, tol_abs, max_iterations)
    else:
        beta, score, iterations = _fit_logit(
            X, z, b, wt, tol_abs, max_iterations)
    return GlmFit(
        coefficients=beta,
        converged=True,
        iterations=iterations,
        score_residuals=score,
        link=link,
        design_names=design.names,
        include_intercept=design.include_intercept,
    )


def _check_design_matches(fit: GlmFit, design: DesignSpec):
    if design.names != fit.design_names:
        raise ValueError(
            f"design columns {design.names} do not match the fitted columns "
            f"{fit.design_names}"
        )
    if design.include_intercept != fit.include_intercept:
        raise ValueError("intercept flag does not match the fitted model")


def predict(fit: GlmFit, design: DesignSpec, offset=None) -> np.ndarray:
    """Response-scale predictions ``g^{-1}(offset + X @ coefficients)``.

    Logit-link outputs are clipped to stay strictly inside (0, 1).
    """
    _check_design_matches(fit, design)
    n = design.n_obs
    if offset is None:
        b = np.zeros(n)
    else:
        b = np.asarray(offset, dtype=float)
        if b.shape != (n,):
            raise ValueError(f"offset has shape {b.shape}, expected ({n},)")
    eta = b + design.expanded() @ fit.coefficients
    if fit.link is Link.IDENTITY:
        return eta
    return np.clip(expit(eta), _PROB_EPS, 1.0 - _PROB_EPS)


def score_residuals(fit: GlmFit, design: DesignSpec, response, link: Link,
                    offset=None, weights=None) -> np.ndarray:
    """Per-parameter score sums evaluated at ``fit.coefficients``.

    Callers use this to certify that an estimating equation is solved; a
    converged fit evaluates to (numerically) zero, while deliberately
    perturbed coefficients expose the residual.
    """
    link = Link(link)
    if link is not fit.link:
        raise ValueError(f"fit used link {fit.link.value!r}, got {link.value!r}")
    _check_design_matches(fit, design)
    z, b, wt = _validate_vectors(design, response, offset, weights, link)
    X = design.expanded()
    mu = _inverse_link(b + X @ fit.coefficients, link)
    return _score(X, z, mu, wt)
