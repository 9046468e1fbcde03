"""
Why the logistic targeting variant exists
==========================================

With a bounded outcome and propensities near the truncation floor, the
influence-function correction can push additive estimators outside the
outcome's own range. The logistic fluctuation performs the same
targeting on the logit scale, so its estimate cannot leave [y_min,
y_max]. This script replays one adversarial replicate where that
difference is not subtle.
"""

import json
import pathlib

from eiftools.estimators import one_step, tmle
from eiftools.nuisance import LearnerSpec, fit_nuisance
from eiftools.simulation import DgpConfig, generate, replicate_seed

# the adversarial generator: a bounded binary outcome and untreated-arm
# probabilities that sink as low as 0.027
config_path = (pathlib.Path(__file__).parent.parent
               / "tests" / "fixtures" / "dgp_adversarial_point.json")
dgp = DgpConfig.from_dict(json.loads(config_path.read_text()))

# replicate 57 of the frozen demonstration seed: only a handful of
# untreated rows land in the low-propensity region
data = generate(dgp, 100, replicate_seed(20260819, 57))
print(f"n = {data.n_obs}, untreated rows = {int((data.treatment == 0).sum())}")

learner = LearnerSpec.parse("glm_main_terms")
nuisance = fit_nuisance(data, learner, learner)
print(f"propensity predictions truncated at 0.01: {nuisance.n_truncated}")

# the outcome lives in [0, 1]; watch where each estimate lands
os_fit = one_step(data, nuisance)
tm_fit = tmle(data, nuisance, "weighted_logistic")
print(f"\none_step:               {os_fit.psi_hat:8.4f}   <- outside [0, 1]")
print(f"tmle_weighted_logistic: {tm_fit.psi_hat:8.4f}   <- inside, always")

# containment is structural: every targeted prediction is a rescaled
# logistic value, so their mean cannot leave the declared bounds
d = tm_fit.diagnostics
print(f"\ntargeted predictions span [{d['targeted_pred_min']:.4f}, "
      f"{d['targeted_pred_max']:.4f}]")

# across 1000 replicates of this generator the one-step leaves the
# bounds dozens of times and the logistic TMLE never does; the
# acceptance suite pins those counts
