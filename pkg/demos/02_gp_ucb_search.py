"""Search the p-value surface with GP-UCB instead of exhaustive evaluation.

A 10x10 attack grid with 5 recorded attack runs per point plays the role of
an expensive oracle.  The grid path consumes run-averaged risks; the UCB
path sees one (noisy) run per round, which is why its estimate tends to sit
at or above the averaged-grid p* once it locks onto the worst region.
"""

import numpy as np

from prosac import (
    HyperGrid,
    RiskTable,
    SafetySpec,
    TableOracle,
    ThresholdParams,
    UcbConfig,
    compare_methods,
)

# synthetic 5-run risk table: per-run Bernoulli noise around a smooth bump
n = 2000
grid = HyperGrid([
    ("steps", np.linspace(1, 10, 10).tolist()),
    ("step_size", np.linspace(0.005, 0.05, 10).tolist()),
])
pts = grid.normalized_points()
true_risk = 0.01 + 0.07 * np.exp(
    -np.sum((pts - np.array([0.66666, 0.55555])) ** 2, axis=1) / (2 * 0.25**2)
)
rng = np.random.default_rng(14)
runs = rng.binomial(n, true_risk[:, None], size=(len(grid), 5)) / n
oracle = TableOracle(RiskTable(grid=grid, runs=runs, n=n))

spec = SafetySpec(alpha=0.10, zeta=0.05, delta=0.01)
cfg = UcbConfig(rounds=100, beta=0.1, noise_std=0.0, seed=99)
report = compare_methods(oracle, grid, spec, cfg,
                         threshold_params=ThresholdParams(scale_c=0.005))

print("grid p* (run-averaged)     :", report.grid_verdict.p_star)
print("UCB p-hat mean over T=100  :", report.ucb_verdict.p_star)
print("UCB max observed           :", report.ucb_verdict.evidence.max_observed)
print("UCB threshold zeta'        :", report.ucb_verdict.threshold)
print("decisions                  :", report.grid_verdict.decision, "/",
      report.ucb_verdict.decision)

print("\nround  lambda              p_hat    running_mean")
for row in report.trajectory_rows()[::10]:
    print(f"{row['round']:5d}  {str(row['lambda']):18s}  "
          f"{row['p_hat']:.4f}   {row['running_mean']:.4f}")

traj = [s.p_hat for s in report.ucb_verdict.evidence.trajectory]
last20 = sum(traj[-20:]) / 20
print("\nmean of the last 20 observations:", round(last20, 4),
      "(vs grid p*", round(report.grid_verdict.p_star, 4), ")")
