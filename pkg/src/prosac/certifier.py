"""Certification decisions over the attacker hyperparameter grid.

The null hypothesis is "some hyperparameter configuration drives the true
adversarial risk above alpha"; rejecting it (p-value <= threshold) declares
the model safe.  Two search strategies are provided:

* grid -- evaluate the risk at every grid point, take the largest p-value
  p*, certify iff p* <= zeta.
* gp_ucb -- search the p-value surface with the UCB loop, average the T
  noisy observations, and certify iff that average is below the
  conservative threshold zeta' (which accounts for search error).  When
  zeta' <= 0 the certifier refuses to decide (indeterminate); it never
  certifies on a non-positive threshold.

simulate_type1 validates the whole pipeline empirically: it draws synthetic
calibration outcomes from a surface whose true max risk exceeds alpha and
measures how often certification is (wrongly) granted.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from .grid import HyperGrid
from .gp_ucb import (
    KernelConfig,
    UcbConfig,
    UcbResult,
    conservative_threshold,
    info_gain_profile,
    ucb_run,
)
from .hb_stats import PValue, RiskEstimate, hb_p_value
from .oracle import AVERAGE, AnalyticSurface, CachedOracle, RiskOracle, TableOracle
from .seeds import rng_from, split_seed

__all__ = [
    "CERTIFIED_SAFE",
    "NOT_CERTIFIED",
    "INDETERMINATE",
    "SafetySpec",
    "ThresholdParams",
    "Verdict",
    "Type1Report",
    "ComparisonReport",
    "CertificationError",
    "grid_certify",
    "ucb_certify",
    "simulate_type1",
    "compare_methods",
]

CERTIFIED_SAFE = "certified_safe"
NOT_CERTIFIED = "not_certified"
INDETERMINATE = "indeterminate"

# Information gain needs a positive observation-noise variance; noiseless
# runs fall back to the unit prior scale (reported in the diagnostics).
_INFO_GAIN_NOISE_FLOOR = 1.0


class CertificationError(RuntimeError):
    """An oracle evaluation failed; the failing grid point is identified."""


@dataclass(frozen=True)
class SafetySpec:
    """Certification target: risk threshold alpha, decision level zeta,
    and the search-confidence level delta used only by the UCB path."""

    alpha: float
    zeta: float
    delta: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha {self.alpha} outside (0, 1)")
        if not (0.0 < self.delta < self.zeta < 1.0):
            raise ValueError(
                f"need 0 < delta < zeta < 1, got delta={self.delta}, zeta={self.zeta}"
            )

    def to_jsonable(self) -> dict:
        return {"alpha": self.alpha, "zeta": self.zeta, "delta": self.delta}


@dataclass(frozen=True)
class ThresholdParams:
    """Constants of the conservative-threshold correction.

    Neither is pinned down by theory alone, so both are explicit
    configuration and are echoed into every verdict.
    """

    B: float = 1.0
    scale_c: float = 1.0

    def __post_init__(self):
        if self.B < 0:
            raise ValueError("B must be >= 0")
        if self.scale_c <= 0:
            raise ValueError("scale_c must be positive")


@dataclass(frozen=True)
class Verdict:
    """Certification outcome plus everything needed to audit it."""

    decision: str
    p_star: float
    threshold: float
    method: str
    spec: SafetySpec
    evidence: tuple[PValue, ...] | UcbResult
    oracle_fingerprint: str
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "diagnostics", dict(self.diagnostics))
        if self.decision == INDETERMINATE:
            if self.threshold > 0:
                raise ValueError("indeterminate verdicts require threshold <= 0")
        else:
            expected = CERTIFIED_SAFE if self.p_star <= self.threshold else NOT_CERTIFIED
            if self.decision != expected:
                raise ValueError(
                    f"decision {self.decision} inconsistent with p_star={self.p_star} "
                    f"vs threshold={self.threshold}"
                )

    def to_jsonable(self) -> dict:
        if isinstance(self.evidence, UcbResult):
            evidence = {
                "p_hat_mean": self.evidence.p_hat_mean,
                "max_observed": self.evidence.max_observed,
                "argmax_observed": list(self.evidence.argmax_observed),
                "trajectory": [
                    {
                        "round": t + 1,
                        "lambda": list(s.lam),
                        "p_hat": s.p_hat,
                        "mean_prev": s.mean_prev,
                        "std_prev": s.std_prev,
                    }
                    for t, s in enumerate(self.evidence.trajectory)
                ],
            }
        else:
            evidence = [
                {
                    "index": i,
                    "lambda": list(p.source_risk.lam),
                    "risk_hat": p.source_risk.risk_hat,
                    "n": p.source_risk.n,
                    "p_value": p.value,
                }
                for i, p in enumerate(self.evidence)
            ]
        return {
            "decision": self.decision,
            "p_star": self.p_star,
            "threshold": self.threshold,
            "method": self.method,
            "spec": self.spec.to_jsonable(),
            "oracle_fingerprint": self.oracle_fingerprint,
            "evidence": evidence,
            "diagnostics": dict(self.diagnostics),
        }


def _evaluate_point(oracle: RiskOracle, grid: HyperGrid, index: int, seed: int,
                    alpha: float) -> PValue:
    lam = grid.points[index]
    try:
        risk = oracle.evaluate(lam, seed)
    except Exception as exc:
        raise CertificationError(
            f"oracle failed at grid point {index} (lambda={tuple(lam.tolist())}): {exc}"
        ) from exc
    return hb_p_value(risk, alpha)


def grid_certify(
    oracle: RiskOracle,
    grid: HyperGrid,
    spec: SafetySpec,
    seed: int = AVERAGE,
    jobs: int = 1,
) -> Verdict:
    """Exhaustive certification: p* = max over the grid of the per-point p-value.

    ``seed`` is forwarded to every oracle evaluation (same calibration
    semantics at each point); table oracles default to the run-averaged
    path.  Evaluations run concurrently only when the oracle declares
    itself concurrency-safe.
    """
    indices = range(len(grid))
    if jobs > 1 and oracle.descriptor.concurrency_safe:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            evidence = list(
                pool.map(lambda i: _evaluate_point(oracle, grid, i, seed, spec.alpha), indices)
            )
    else:
        evidence = [_evaluate_point(oracle, grid, i, seed, spec.alpha) for i in indices]
    values = [p.value for p in evidence]
    best = int(np.argmax(values))
    p_star = values[best]
    decision = CERTIFIED_SAFE if p_star <= spec.zeta else NOT_CERTIFIED
    return Verdict(
        decision=decision,
        p_star=p_star,
        threshold=spec.zeta,
        method="grid",
        spec=spec,
        evidence=tuple(evidence),
        oracle_fingerprint=oracle.fingerprint(),
        diagnostics={
            "argmax_index": best,
            "argmax_lambda": [float(v) for v in grid.points[best]],
            "oracle": oracle.descriptor.to_jsonable(),
        },
    )


def _unwrap(oracle: RiskOracle) -> RiskOracle:
    while isinstance(oracle, CachedOracle):
        oracle = oracle.inner
    return oracle


def _table_p_noise_std(oracle: RiskOracle, alpha: float) -> float | None:
    """Pooled across-run std of the p-value surface for multi-run tables."""
    base = _unwrap(oracle)
    if not isinstance(base, TableOracle) or base.table.n_runs < 2:
        return None
    table = base.table
    p = np.array(
        [
            [hb_p_value(RiskEstimate(float(r), table.n), alpha).value for r in row]
            for row in table.runs
        ]
    )
    return float(np.sqrt(np.mean(np.var(p, axis=1, ddof=1))))


_info_gain_cache: dict[tuple, np.ndarray] = {}


def _cached_info_profile(kernel: KernelConfig, grid: HyperGrid, noise_var: float,
                         T: int) -> np.ndarray:
    key = (kernel, grid.points.tobytes(), noise_var, min(T, len(grid)))
    hit = _info_gain_cache.get(key)
    if hit is None:
        hit = info_gain_profile(kernel, grid, noise_var, T)
        _info_gain_cache[key] = hit
    return hit


def _min_rounds_for_positive_threshold(
    profile: np.ndarray,
    kernel: KernelConfig,
    grid: HyperGrid,
    noise_var: float,
    spec: SafetySpec,
    params: ThresholdParams,
) -> int | None:
    """Smallest T with zeta'(T) > 0 under the configured constants, if any."""
    margin = spec.zeta - spec.delta
    if margin <= 0:
        return None
    full = _cached_info_profile(kernel, grid, noise_var, len(grid))
    for t in range(1, len(full) + 1):
        if conservative_threshold(
            spec.zeta, spec.delta, params.B, float(full[t - 1]), t, params.scale_c
        ) > 0:
            return t
    gamma = float(full[-1])
    log_term = math.log(1.0 / spec.delta)
    numerator = params.scale_c * (
        params.B * math.sqrt(gamma) + math.sqrt(gamma * (gamma + log_term))
    )
    return max(int(math.floor((numerator / margin) ** 2)) + 1, len(full) + 1)


def ucb_certify(
    oracle: RiskOracle,
    grid: HyperGrid,
    spec: SafetySpec,
    cfg: UcbConfig,
    kernel: KernelConfig | None = None,
    threshold_params: ThresholdParams | None = None,
) -> Verdict:
    """UCB-search certification against the conservative threshold.

    Each round draws a fresh oracle seed from cfg.seed, so table oracles
    serve per-round single-run (noisy) risks while the grid path can keep
    using run averages.  When the oracle is a multi-run table and no GP
    noise is configured, the GP assumes the pooled across-run p-value std.
    """
    kernel = kernel or KernelConfig()
    params = threshold_params or ThresholdParams()
    run_cfg = cfg
    if cfg.gp_noise_std is None:
        table_std = _table_p_noise_std(oracle, spec.alpha)
        if table_std is not None:
            run_cfg = replace(cfg, gp_noise_std=table_std)

    rounds_done = [0]

    def p_oracle(lam: np.ndarray) -> float:
        rounds_done[0] += 1
        eval_seed = split_seed(cfg.seed, "ucb-eval", rounds_done[0])
        risk = oracle.evaluate(lam, eval_seed)
        return hb_p_value(risk, spec.alpha).value

    result = ucb_run(p_oracle, grid, run_cfg, kernel=kernel)

    gain_noise_var = run_cfg.effective_gp_noise_std**2
    if gain_noise_var <= 0.0:
        gain_noise_var = _INFO_GAIN_NOISE_FLOOR
    profile = _cached_info_profile(kernel, grid, gain_noise_var, cfg.rounds)
    gamma = float(profile[min(cfg.rounds, len(profile)) - 1])
    zeta_prime = conservative_threshold(
        spec.zeta, spec.delta, params.B, gamma, cfg.rounds, params.scale_c
    )
    diagnostics: dict[str, Any] = {
        "gamma_T": gamma,
        "zeta_prime": zeta_prime,
        "B": params.B,
        "scale_c": params.scale_c,
        "rounds": cfg.rounds,
        "beta": cfg.beta,
        "noise_std": cfg.noise_std,
        "gp_noise_std": run_cfg.effective_gp_noise_std,
        "info_gain_noise_variance": gain_noise_var,
        "max_observed": result.max_observed,
        "oracle": oracle.descriptor.to_jsonable(),
    }
    if zeta_prime <= 0:
        decision = INDETERMINATE
        diagnostics["min_rounds_for_positive_threshold"] = (
            _min_rounds_for_positive_threshold(
                profile, kernel, grid, gain_noise_var, spec, params
            )
        )
    else:
        decision = CERTIFIED_SAFE if result.p_hat_mean <= zeta_prime else NOT_CERTIFIED
    return Verdict(
        decision=decision,
        p_star=result.p_hat_mean,
        threshold=zeta_prime,
        method="gp_ucb",
        spec=spec,
        evidence=result,
        oracle_fingerprint=oracle.fingerprint(),
        diagnostics=diagnostics,
    )


class _FrozenSurfaceOracle(RiskOracle):
    """One Monte Carlo trial's synthetic calibration outcome.

    The calibration draw is frozen at construction; evaluate ignores the
    incoming seed so that every lambda (and both certification methods)
    sees the same trial data.  With shared coupling one vector of uniforms
    drives the indicators of every grid point (the same samples are
    attacked under every configuration); with independent coupling each
    point gets its own draws.
    """

    def __init__(self, grid: HyperGrid, risks: np.ndarray, n: int, trial_seed: int,
                 coupling: str):
        self._grid = grid
        self._n = n
        if coupling == "shared":
            u = rng_from(trial_seed, "calibration").random(n)
            counts = [(u < r).sum() for r in risks]
        elif coupling == "independent":
            counts = [
                (rng_from(trial_seed, "calibration", j).random(n) < r).sum()
                for j, r in enumerate(risks)
            ]
        else:
            raise ValueError(f"unknown coupling {coupling!r}")
        self._risk_hats = np.asarray(counts, dtype=np.float64) / n
        self._descriptor = None

    @property
    def descriptor(self):
        from .oracle import OracleDescriptor

        if self._descriptor is None:
            self._descriptor = OracleDescriptor(
                kind="analytic", n=self._n, attack_metadata={"synthetic": "type1-trial"}
            )
        return self._descriptor

    def evaluate(self, lam, seed: int) -> RiskEstimate:
        idx = self._grid.index_of(lam)
        return RiskEstimate(float(self._risk_hats[idx]), self._n, lam=tuple(np.asarray(lam)))

    def fingerprint(self) -> str:
        return "frozen-trial"


@dataclass(frozen=True)
class Type1Report:
    """Monte Carlo estimate of the false-certification probability."""

    rejection_rate: float
    stderr: float
    trials: int
    rejections: int
    method: str
    spec: SafetySpec
    coupling: str
    seed: int
    max_true_risk: float

    def to_jsonable(self) -> dict:
        return {
            "rejection_rate": self.rejection_rate,
            "stderr": self.stderr,
            "trials": self.trials,
            "rejections": self.rejections,
            "method": self.method,
            "spec": self.spec.to_jsonable(),
            "coupling": self.coupling,
            "seed": self.seed,
            "max_true_risk": self.max_true_risk,
            "bound": self.spec.zeta + 3.0 * self.stderr,
            "within_bound": self.rejection_rate <= self.spec.zeta + 3.0 * self.stderr,
        }


def simulate_type1(
    surface: AnalyticSurface,
    grid: HyperGrid,
    spec: SafetySpec,
    n: int,
    trials: int,
    method: str = "grid",
    seed: int = 0,
    coupling: str = "shared",
    ucb: UcbConfig | None = None,
    kernel: KernelConfig | None = None,
    threshold_params: ThresholdParams | None = None,
) -> Type1Report:
    """Estimate P(certify) when the model is truly unsafe (max risk > alpha).

    Each trial freezes a synthetic calibration outcome drawn from the
    surface's per-point true risks, runs the chosen certification path on
    it, and records whether certification was (wrongly) granted.  Trial
    seeds are a fixed function of the trial index, independent of any
    scheduling.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if method not in ("grid", "gp_ucb"):
        raise ValueError(f"unknown method {method!r}")
    if method == "gp_ucb" and ucb is None:
        raise ValueError("gp_ucb simulation needs a UcbConfig")
    risks = np.array([surface.risk(pt) for pt in grid.points])
    max_risk = float(risks.max())
    if max_risk <= spec.alpha:
        raise ValueError(
            f"surface max true risk {max_risk} <= alpha {spec.alpha}: "
            "the null hypothesis is false, this would not measure Type-I error"
        )
    rejections = 0
    for i in range(trials):
        trial_seed = split_seed(seed, "trial", i)
        oracle = _FrozenSurfaceOracle(grid, risks, n, trial_seed, coupling)
        if method == "grid":
            verdict = grid_certify(oracle, grid, spec, seed=0)
        else:
            cfg = replace(ucb, seed=split_seed(trial_seed, "ucb-run"))
            verdict = ucb_certify(
                oracle, grid, spec, cfg, kernel=kernel, threshold_params=threshold_params
            )
        rejections += verdict.decision == CERTIFIED_SAFE
    rate = rejections / trials
    stderr = math.sqrt(rate * (1.0 - rate) / trials)
    return Type1Report(
        rejection_rate=rate,
        stderr=stderr,
        trials=trials,
        rejections=rejections,
        method=method,
        spec=spec,
        coupling=coupling,
        seed=seed,
        max_true_risk=max_risk,
    )


@dataclass(frozen=True)
class ComparisonReport:
    """Side-by-side grid vs UCB certification on the same oracle."""

    grid_verdict: Verdict
    ucb_verdict: Verdict

    @property
    def p_star_grid(self) -> float:
        return self.grid_verdict.p_star

    def trajectory_rows(self) -> list[dict]:
        """Per-round rows: observation, running mean, and the grid p* line."""
        rows = []
        running = 0.0
        for t, step in enumerate(self.ucb_verdict.evidence.trajectory, start=1):
            running += step.p_hat
            rows.append(
                {
                    "round": t,
                    "lambda": list(step.lam),
                    "p_hat": step.p_hat,
                    "running_mean": running / t,
                    "grid_p_star": self.grid_verdict.p_star,
                }
            )
        return rows

    def to_jsonable(self) -> dict:
        return {
            "grid": self.grid_verdict.to_jsonable(),
            "gp_ucb": self.ucb_verdict.to_jsonable(),
            "summary": {
                "grid_p_star": self.grid_verdict.p_star,
                "ucb_p_hat_mean": self.ucb_verdict.p_star,
                "ucb_max_observed": self.ucb_verdict.evidence.max_observed,
                "grid_decision": self.grid_verdict.decision,
                "ucb_decision": self.ucb_verdict.decision,
            },
        }


def compare_methods(
    oracle: RiskOracle,
    grid: HyperGrid,
    spec: SafetySpec,
    cfg: UcbConfig,
    kernel: KernelConfig | None = None,
    threshold_params: ThresholdParams | None = None,
    grid_seed: int | None = None,
) -> ComparisonReport:
    """Run both certification paths on one oracle.

    For table oracles the grid path defaults to the run-averaged risks
    while the UCB path observes per-round single-run values; that
    asymmetry is exactly what makes the UCB estimate sit above the
    averaged-grid p* on noisy surfaces.
    """
    if grid_seed is None:
        grid_seed = (
            AVERAGE
            if isinstance(_unwrap(oracle), TableOracle)
            else split_seed(cfg.seed, "grid-eval")
        )
    grid_verdict = grid_certify(oracle, grid, spec, seed=grid_seed)
    ucb_verdict = ucb_certify(
        oracle, grid, spec, cfg, kernel=kernel, threshold_params=threshold_params
    )
    return ComparisonReport(grid_verdict=grid_verdict, ucb_verdict=ucb_verdict)
