"""Walk through the statistical core: p-values, then a full certification.

The p-value tests the null "true adversarial risk at this attack
configuration exceeds alpha".  Small p-value = strong evidence the model is
safe at that configuration; the certification takes the WORST (largest)
p-value over the whole attacker grid.
"""

import numpy as np

from prosac import (
    AnalyticOracle,
    AnalyticSurface,
    HyperGrid,
    RiskEstimate,
    SafetySpec,
    binom_tail,
    grid_certify,
    h1,
    hb_p_value,
)

# --- the two ingredients of the p-value -----------------------------------
print("h1(0.05, 0.1)        =", h1(0.05, 0.1), "(Bernoulli KL divergence)")
print("binom_tail(10,100,.1) =", binom_tail(10, 100, 0.1))

# observing zero adversarial errors out of 1000 samples is damning evidence
# against "risk > 0.1":
p = hb_p_value(RiskEstimate(0.0, 1000), alpha=0.1)
print("p-value for 0/1000 errors at alpha=0.1:", p.value)

# risk estimates at or above alpha carry no evidence at all:
print("p-value for 500/1000 errors:", hb_p_value(RiskEstimate(0.5, 1000), 0.1).value)

# --- certify a model against a whole attack grid ---------------------------
# The oracle is synthetic here: a known true-risk surface over the attack
# hyperparameters (iteration count, step size), sampled with n Bernoulli
# calibration indicators per query.
grid = HyperGrid([
    ("steps", np.linspace(1, 10, 10).tolist()),
    ("step_size", np.linspace(0.005, 0.05, 10).tolist()),
])
surface = AnalyticSurface("gaussian_bump", {
    "base": 0.005, "amplitude": 0.035, "center": [10.0, 0.05], "width": 3.0,
})
oracle = AnalyticOracle(surface, n=1000)

spec = SafetySpec(alpha=0.10, zeta=0.05)
verdict = grid_certify(oracle, grid, spec, seed=0)

print("\ndecision :", verdict.decision)
print("p*       :", verdict.p_star)
print("threshold:", verdict.threshold)
print("worst configuration:", verdict.diagnostics["argmax_lambda"])

# every per-point p-value is retained for auditing:
worst = max(verdict.evidence, key=lambda pv: pv.value)
print("evidence rows:", len(verdict.evidence),
      "| worst point risk:", worst.source_risk.risk_hat)
