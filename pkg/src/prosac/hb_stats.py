"""Hoeffding-Bentkus p-values for empirical adversarial risk.

For an empirical risk r over n calibration samples and a target level
``alpha``, the p-value against the null "true risk > alpha" is

    p = min( exp(-n * h1(r, alpha)),  e * P(Bin(n, alpha) <= ceil(n*r)),  1 )

with h1 the Bernoulli KL divergence.  The exponential (Hoeffding) branch is
one-sided: it is taken as 1 whenever r >= alpha.  Everything here is a pure
function; the binomial CDF is evaluated in 80-bit extended precision from an
anchored log-space PMF series so that results track arbitrary-precision
references to ~1e-12 relative error for n up to 1e5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "RiskEstimate",
    "PValue",
    "h1",
    "binom_tail",
    "hb_p_value",
    "empirical_risk",
    "MIN_P_VALUE",
]

# Smallest positive double; p-values are clamped here instead of hitting 0.
MIN_P_VALUE = math.ulp(0.0)

_LD = np.longdouble
# Full-CDF tables are cached up to this n; larger n uses a single-k pass.
_TABLE_MAX_N = 4096


@dataclass(frozen=True)
class RiskEstimate:
    """Empirical adversarial risk at one hyperparameter point.

    ``risk_hat`` is the fraction of calibration samples that the clean model
    classifies correctly AND the attack fools.  When the per-sample
    indicator pairs are kept, ``risk_hat`` must equal their reduction
    exactly (a multiple of 1/n).
    """

    risk_hat: float
    n: int
    lam: tuple[float, ...] = ()
    per_sample: np.ndarray | None = None  # shape (n, 2): (correct, fooled)

    def __post_init__(self):
        if not (0.0 <= self.risk_hat <= 1.0):
            raise ValueError(f"risk_hat {self.risk_hat} outside [0, 1]")
        if self.n < 1:
            raise ValueError(f"calibration size n={self.n} must be >= 1")
        object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        if self.per_sample is not None:
            ps = np.asarray(self.per_sample, dtype=np.uint8)
            if ps.shape != (self.n, 2):
                raise ValueError(f"per_sample shape {ps.shape} != ({self.n}, 2)")
            count = int(ps[:, 0].astype(np.int64) @ ps[:, 1].astype(np.int64))
            if self.risk_hat != count / self.n:
                raise ValueError(
                    f"risk_hat {self.risk_hat} != per-sample count {count}/{self.n}"
                )
            ps.setflags(write=False)
            object.__setattr__(self, "per_sample", ps)


@dataclass(frozen=True)
class PValue:
    """A super-uniform p-value and the level it was computed against."""

    value: float
    alpha: float
    source_risk: RiskEstimate

    def __post_init__(self):
        if not (0.0 < self.value <= 1.0):
            raise ValueError(f"p-value {self.value} outside (0, 1]")


def h1(a: float, b: float) -> float:
    """Bernoulli KL divergence a*log(a/b) + (1-a)*log((1-a)/(1-b)).

    Defined for 0 <= a < 1 and 0 < b < 1; a = 0 uses the analytic limit
    log(1/(1-b)).  Always >= 0.
    """
    if not (0.0 < b < 1.0):
        raise ValueError(f"h1: b={b} outside (0, 1)")
    if not (0.0 <= a < 1.0):
        raise ValueError(f"h1: a={a} outside [0, 1)")
    if a == 0.0:
        return -math.log1p(-b)
    val = a * math.log(a / b) + (1.0 - a) * (math.log1p(-a) - math.log1p(-b))
    return max(val, 0.0)


def _log_pmf_series(n: int, alpha: float, hi: int) -> np.ndarray:
    """log Bin(n, alpha) PMF at 0..hi, in extended precision.

    Anchored at log pmf(0) = n*log1p(-alpha) and extended through the
    ratio recurrence pmf(i+1)/pmf(i) = (n-i)/(i+1) * alpha/(1-alpha).
    """
    a = _LD(alpha)
    out = np.empty(hi + 1, dtype=_LD)
    out[0] = _LD(n) * np.log1p(-a)
    if hi > 0:
        i = np.arange(hi, dtype=_LD)
        g = np.log((_LD(n) - i) / (i + 1.0)) + (np.log(a) - np.log1p(-a))
        np.cumsum(g, out=out[1:])
        out[1:] += out[0]
    return out


def _sum_anchored(logpmf: np.ndarray) -> float:
    """Sum exp(logpmf) stably: factor out the max, sum ratios, recombine."""
    m = int(np.argmax(logpmf))
    with np.errstate(under="ignore"):
        s = np.sum(np.exp(logpmf - logpmf[m]))
        val = np.exp(logpmf[m] + np.log(s))
    return float(val)


@lru_cache(maxsize=64)
def _cdf_table(n: int, alpha: float) -> np.ndarray:
    """Full CDF vector P(Bin(n, alpha) <= k), k = 0..n, float64.

    Built from one extended-precision cumulative sum, so it is
    nondecreasing by construction; the k = n entry is pinned to 1.
    """
    logpmf = _log_pmf_series(n, alpha, n)
    m = int(np.argmax(logpmf))
    with np.errstate(under="ignore"):
        terms = np.exp(logpmf - logpmf[m])
        cdf = np.cumsum(terms) * np.exp(logpmf[m])
    out = np.clip(cdf, 0.0, 1.0).astype(np.float64)
    out[-1] = 1.0
    out.setflags(write=False)
    return out


def binom_tail(k: int, n: int, alpha: float) -> float:
    """P(Bin(n, alpha) <= k), numerically stable, monotone nondecreasing in k."""
    n = int(n)
    k = int(k)
    if n < 1:
        raise ValueError(f"binom_tail: n={n} must be >= 1")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"binom_tail: alpha={alpha} outside (0, 1)")
    if k < 0 or k > n:
        raise ValueError(f"binom_tail: k={k} outside [0, {n}]")
    if k == n:
        return 1.0
    if n <= _TABLE_MAX_N:
        return float(_cdf_table(n, float(alpha))[k])
    # Single-k pass for large n.  The sum runs 0..hi; indices beyond the
    # binomial mode + a ~16-sigma window add less than 1e-50 relative mass.
    mode = min(n, int((n + 1) * alpha))
    sigma = math.sqrt(n * alpha * (1.0 - alpha))
    hi = min(k, mode + int(16.0 * sigma + 120.0))
    val = _sum_anchored(_log_pmf_series(n, float(alpha), hi))
    return min(max(val, 0.0), 1.0)


def hb_p_value(risk: RiskEstimate, alpha: float) -> PValue:
    """Hoeffding-Bentkus p-value for the null "true risk > alpha".

    The Hoeffding branch exp(-n*h1(r, alpha)) applies only on the one-sided
    branch r < alpha (it is 1 otherwise); the Bentkus branch is
    e * P(Bin(n, alpha) <= ceil(n*r)).  The result is clamped to (0, 1].
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"hb_p_value: alpha={alpha} outside (0, 1)")
    r = risk.risk_hat
    n = risk.n
    if r < alpha:
        try:
            hoeffding = math.exp(-n * h1(r, alpha))
        except OverflowError:  # n*h1 astronomically negative cannot happen; guard anyway
            hoeffding = 0.0
    else:
        hoeffding = 1.0
    # ceil with a small nudge so lattice values k/n do not round to k+1.
    k = min(max(math.ceil(n * r - 1e-9), 0), n)
    bentkus = math.e * binom_tail(k, n, alpha)
    value = max(min(hoeffding, bentkus, 1.0), MIN_P_VALUE)
    return PValue(value=value, alpha=alpha, source_risk=risk)


def empirical_risk(correct, fooled, lam=()) -> RiskEstimate:
    """Empirical adversarial risk (1/n) * sum(fooled_i * correct_i).

    Only samples the clean model classifies correctly can count as
    adversarial errors.  The indicator pairs are retained per sample.
    """
    c = np.asarray(correct)
    f = np.asarray(fooled)
    if c.ndim != 1 or f.ndim != 1 or c.shape != f.shape:
        raise ValueError(f"indicator shapes differ: {c.shape} vs {f.shape}")
    if c.shape[0] < 1:
        raise ValueError("empirical_risk needs at least one sample")
    for name, arr in (("correct", c), ("fooled", f)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} contains non-binary entries")
    c = c.astype(np.uint8)
    f = f.astype(np.uint8)
    n = int(c.shape[0])
    count = int(c.astype(np.int64) @ f.astype(np.int64))
    return RiskEstimate(
        risk_hat=count / n,
        n=n,
        lam=tuple(float(v) for v in lam),
        per_sample=np.column_stack([c, f]),
    )
