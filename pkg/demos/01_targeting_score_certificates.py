"""
Targeting updates come with a checkable certificate
====================================================

Every TMLE variant reports the targeting-score sum at its solution and
the mean of the estimated influence function. Both should be numerically
zero after the update; this script prints the certificates so you can
see them.
"""

import numpy as np

from eiftools.estimators import tmle
from eiftools.nuisance import LearnerSpec, fit_nuisance
from eiftools.data import Dataset

# simulate one dataset: two covariates, a confounded binary treatment,
# and a bounded outcome
rng = np.random.default_rng(7)
n = 400
w1 = rng.uniform(size=n)
w2 = rng.uniform(size=n)
p_untreated = 1.0 / (1.0 + np.exp(-(-0.8 + 1.2 * w1 - 0.6 * w2)))
a = (rng.random(n) >= p_untreated).astype(float)
p_y = 1.0 / (1.0 + np.exp(-(-0.5 + 1.0 * w1 + 0.8 * w2 - 0.7 * a)))
y = (rng.random(n) < p_y).astype(float)
data = Dataset.from_columns({"w1": w1, "w2": w2}, a, y, y_bounds=(0.0, 1.0))

# fit both nuisance models once and reuse them for every variant
learner = LearnerSpec.parse("glm_main_terms")
nuisance = fit_nuisance(data, learner, learner)

print(f"{'variant':20s} {'psi_hat':>9s} {'score residual':>15s} "
      f"{'mean EIF':>12s}")
for variant in ("covariate_linear", "weighted_linear", "weighted_logistic"):
    fit = tmle(data, nuisance, variant)
    d = fit.diagnostics
    print(f"{variant:20s} {fit.psi_hat:9.5f} {d['score_residual']:15.2e} "
          f"{d['mean_eif']:12.2e}")

# the residuals are certified relative to 1 + sum of the clever weights;
# anything at or below 1e-8 of that scale counts as solved
fit = tmle(data, nuisance, "weighted_linear")
scale = fit.diagnostics["score_scale"]
print(f"\ncertificate scale (1 + weight sum): {scale:.1f}")
print(f"relative residual: {abs(fit.diagnostics['score_residual']) / scale:.2e}")
