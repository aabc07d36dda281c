"""Gaussian-process regression with Matern kernels and the UCB search loop.

The search maximizes an expensive black-box function (here: the p-value
surface over the attacker grid) by repeatedly selecting the grid point with
the highest posterior mean + beta * std, observing a noisy value there, and
conditioning the GP on it.  After T rounds it returns the average of the
observed values together with the full trajectory.

Kernel evaluation always happens in min-max normalized grid coordinates
(see HyperGrid.normalized_points), so the default unit length scale is
meaningful regardless of the axes' physical units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .grid import HyperGrid
from .seeds import rng_from

__all__ = [
    "KernelConfig",
    "GPState",
    "UcbConfig",
    "UcbResult",
    "TrajectoryStep",
    "IllConditionedKernelError",
    "RoundEvaluationError",
    "kernel_eval",
    "gram",
    "posterior",
    "posterior_batch",
    "ucb_select",
    "ucb_run",
    "info_gain",
    "info_gain_profile",
    "conservative_threshold",
]

_SUPPORTED_SMOOTHNESS = (0.5, 1.5, 2.5)


class IllConditionedKernelError(RuntimeError):
    """Gram factorization failed even after jitter escalation."""


class RoundEvaluationError(RuntimeError):
    """The p-value oracle failed; carries the 1-based round index."""

    def __init__(self, round_index: int, original: BaseException):
        self.round_index = round_index
        super().__init__(f"oracle evaluation failed at round {round_index}: {original}")


@dataclass(frozen=True)
class KernelConfig:
    """Matern covariance configuration.

    smoothness must be one of 0.5, 1.5, 2.5 (closed forms, no Bessel
    functions); length_scale is either a scalar or one positive value per
    input dimension; k(x, x) = signal_variance for every x.
    """

    family: str = "matern"
    smoothness: float = 2.5
    length_scale: float | tuple[float, ...] = 1.0
    signal_variance: float = 1.0

    def __post_init__(self):
        if self.family != "matern":
            raise ValueError(f"unsupported kernel family {self.family!r}")
        if self.smoothness not in _SUPPORTED_SMOOTHNESS:
            raise ValueError(
                f"smoothness {self.smoothness} not in {_SUPPORTED_SMOOTHNESS}"
            )
        ls = self.length_scale
        if isinstance(ls, (int, float)):
            if ls <= 0:
                raise ValueError("length_scale must be positive")
        else:
            ls = tuple(float(v) for v in ls)
            if not ls or any(v <= 0 for v in ls):
                raise ValueError("length_scale entries must be positive")
            object.__setattr__(self, "length_scale", ls)
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")

    def length_scales(self, dim: int) -> np.ndarray:
        ls = self.length_scale
        if isinstance(ls, (int, float)):
            return np.full(dim, float(ls))
        if len(ls) != dim:
            raise ValueError(f"length_scale has {len(ls)} entries for dim {dim}")
        return np.asarray(ls, dtype=np.float64)


def _scaled_dists(cfg: KernelConfig, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    ls = cfg.length_scales(x.shape[1])
    dx = (x[:, None, :] - y[None, :, :]) / ls
    return np.sqrt(np.sum(dx * dx, axis=-1))


def gram(cfg: KernelConfig, x, y=None) -> np.ndarray:
    """Covariance matrix between two point sets (y defaults to x)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = x if y is None else np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    r = _scaled_dists(cfg, x, y)
    nu = cfg.smoothness
    if nu == 0.5:
        k = np.exp(-r)
    elif nu == 1.5:
        s = math.sqrt(3.0) * r
        k = (1.0 + s) * np.exp(-s)
    else:  # nu == 2.5
        s = math.sqrt(5.0) * r
        k = (1.0 + s + s * s / 3.0) * np.exp(-s)
    return cfg.signal_variance * k


def kernel_eval(cfg: KernelConfig, x, y) -> float:
    """Matern covariance between two points; symmetric in its arguments."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    y = np.asarray(y, dtype=np.float64).reshape(1, -1)
    return float(gram(cfg, x, y)[0, 0])


def _factorize(k_matrix: np.ndarray, signal_variance: float) -> np.ndarray:
    """Cholesky with jitter 1e-10 * signal_variance, escalated x10 to 1e-6."""
    jitter = 1e-10 * signal_variance
    eye = np.eye(k_matrix.shape[0])
    while jitter <= 1e-6 * signal_variance * (1 + 1e-12):
        try:
            return np.linalg.cholesky(k_matrix + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise IllConditionedKernelError(
        f"Gram matrix of size {k_matrix.shape[0]} not positive definite "
        f"even with jitter {1e-6 * signal_variance:g}"
    )


@dataclass(frozen=True)
class GPState:
    """Posterior state: observed points/values plus a cached factorization.

    Prior mean is zero; observations carry i.i.d. Gaussian noise with
    variance ``noise_variance``.  States are immutable; conditioning on a
    new observation returns a fresh state.
    """

    kernel: KernelConfig
    noise_variance: float
    points: np.ndarray  # (t, d)
    values: np.ndarray  # (t,)
    _chol: np.ndarray | None = field(default=None, repr=False)
    _coef: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def empty(cls, kernel: KernelConfig, noise_variance: float, dim: int) -> "GPState":
        if noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")
        return cls(
            kernel=kernel,
            noise_variance=float(noise_variance),
            points=np.empty((0, dim)),
            values=np.empty(0),
        )

    @property
    def n_observations(self) -> int:
        return self.points.shape[0]

    def with_observation(self, point, value: float) -> "GPState":
        point = np.asarray(point, dtype=np.float64).reshape(1, -1)
        if point.shape[1] != self.points.shape[1]:
            raise ValueError("observation dimension mismatch")
        pts = np.vstack([self.points, point])
        vals = np.append(self.values, float(value))
        k = gram(self.kernel, pts) + self.noise_variance * np.eye(len(pts))
        chol = _factorize(k, self.kernel.signal_variance)
        coef = solve_triangular(
            chol.T, solve_triangular(chol, vals, lower=True), lower=False
        )
        return GPState(
            kernel=self.kernel,
            noise_variance=self.noise_variance,
            points=pts,
            values=vals,
            _chol=chol,
            _coef=coef,
        )


def posterior_batch(state: GPState, queries) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and standard deviations at many query points."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    prior_var = state.kernel.signal_variance
    if state.n_observations == 0:
        return np.zeros(len(q)), np.full(len(q), math.sqrt(prior_var))
    ks = gram(state.kernel, q, state.points)  # (m, t)
    means = ks @ state._coef
    v = solve_triangular(state._chol, ks.T, lower=True)  # (t, m)
    var = prior_var - np.sum(v * v, axis=0)
    return means, np.sqrt(np.clip(var, 0.0, None))


def posterior(state: GPState, query) -> tuple[float, float]:
    """Posterior (mean, std) at one query point; prior is (0, sqrt(k(q, q)))."""
    means, stds = posterior_batch(state, np.asarray(query).reshape(1, -1))
    return float(means[0]), float(stds[0])


def _acquisition(state: GPState, points: np.ndarray, beta: float) -> np.ndarray:
    means, stds = posterior_batch(state, points)
    return means + beta * stds


def _candidate_matrix(grid) -> np.ndarray:
    if isinstance(grid, HyperGrid):
        return grid.points
    return np.atleast_2d(np.asarray(grid, dtype=np.float64))


def ucb_select(state: GPState, grid, beta: float) -> np.ndarray:
    """Grid point maximizing mean + beta * std; ties go to the lowest index.

    The candidate set must live in the same coordinate system as the
    state's observations (ucb_run works in normalized grid coordinates).
    """
    pts = _candidate_matrix(grid)
    if len(pts) == 0:
        raise ValueError("candidate set is empty")
    idx = int(np.argmax(_acquisition(state, pts, beta)))
    return pts[idx]


@dataclass(frozen=True)
class UcbConfig:
    """Search configuration: exploration weight, rounds, noise, seed.

    ``noise_std`` is the standard deviation of the zero-mean Gaussian noise
    injected into each observation.  ``gp_noise_std`` is the observation
    noise the GP posterior assumes; it defaults to ``noise_std`` and is
    overridden when the oracle itself is noisy (e.g. single-run risk
    tables).
    """

    rounds: int
    beta: float = 0.1
    noise_std: float = 0.0
    seed: int = 0
    gp_noise_std: float | None = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.gp_noise_std is not None and self.gp_noise_std < 0:
            raise ValueError("gp_noise_std must be >= 0")

    @property
    def effective_gp_noise_std(self) -> float:
        return self.noise_std if self.gp_noise_std is None else self.gp_noise_std


@dataclass(frozen=True)
class TrajectoryStep:
    """One search round: the chosen point, the noisy observation, and the
    posterior snapshot (before the observation) that justified the choice."""

    lam: tuple[float, ...]
    p_hat: float
    mean_prev: float
    std_prev: float


def _trajectory_mean(values: Sequence[float]) -> float:
    """Canonical mean of the observations: exact sum, then clamped into
    [min, max] so one-ulp division error cannot leave the observed range."""
    mean = math.fsum(values) / len(values)
    return min(max(mean, min(values)), max(values))


@dataclass(frozen=True)
class UcbResult:
    """Outcome of a T-round search.

    ``p_hat_mean`` is the arithmetic mean of the observed values (the
    quantity the certification decision uses); ``max_observed`` and its
    location are reported alongside for auditing.
    """

    p_hat_mean: float
    trajectory: tuple[TrajectoryStep, ...]
    max_observed: float
    argmax_observed: tuple[float, ...]

    def __post_init__(self):
        vals = [s.p_hat for s in self.trajectory]
        if not vals:
            raise ValueError("trajectory must not be empty")
        if self.p_hat_mean != _trajectory_mean(vals):
            raise ValueError("p_hat_mean must equal the mean of the trajectory")
        if not (min(vals) <= self.p_hat_mean <= max(vals)):
            raise ValueError("mean outside trajectory range")


def ucb_run(
    p_oracle: Callable[[np.ndarray], float],
    grid: HyperGrid,
    cfg: UcbConfig,
    kernel: KernelConfig | None = None,
    forced_visits: Sequence[int] | None = None,
) -> UcbResult:
    """Run T rounds of select -> observe -> condition and average the observations.

    ``p_oracle`` maps a grid point (in original grid coordinates) to a value;
    a zero-mean Gaussian with std ``cfg.noise_std`` (seeded from ``cfg.seed``)
    is added to each observation.  ``forced_visits`` is a test-harness hook
    that overrides acquisition with an explicit sequence of grid indices.
    """
    if len(grid) == 0:
        raise ValueError("grid is empty")
    kernel = kernel or KernelConfig()
    pts_norm = grid.normalized_points()
    state = GPState.empty(kernel, cfg.effective_gp_noise_std**2, grid.dim)
    noise_rng = rng_from(cfg.seed, "ucb-noise")
    if forced_visits is not None and len(forced_visits) != cfg.rounds:
        raise ValueError("forced_visits must supply one index per round")

    steps: list[TrajectoryStep] = []
    for t in range(1, cfg.rounds + 1):
        if forced_visits is not None:
            idx = int(forced_visits[t - 1])
        else:
            idx = int(np.argmax(_acquisition(state, pts_norm, cfg.beta)))
        mean_prev, std_prev = posterior(state, pts_norm[idx])
        lam = grid.points[idx]
        try:
            p_true = float(p_oracle(lam))
        except Exception as exc:
            raise RoundEvaluationError(t, exc) from exc
        noise = float(noise_rng.normal(0.0, cfg.noise_std)) if cfg.noise_std > 0 else 0.0
        p_hat = p_true + noise
        state = state.with_observation(pts_norm[idx], p_hat)
        steps.append(
            TrajectoryStep(
                lam=tuple(lam.tolist()),
                p_hat=p_hat,
                mean_prev=mean_prev,
                std_prev=std_prev,
            )
        )

    values = [s.p_hat for s in steps]
    best = int(np.argmax(values))
    return UcbResult(
        p_hat_mean=_trajectory_mean(values),
        trajectory=tuple(steps),
        max_observed=values[best],
        argmax_observed=steps[best].lam,
    )


def info_gain_profile(
    kernel: KernelConfig, grid: HyperGrid, noise_variance: float, T: int
) -> np.ndarray:
    """Greedy information-gain curve gamma_1..gamma_m, m = min(T, |grid|).

    Step j adds the point with the largest posterior variance and scores
    0.5 * log(1 + var / noise_variance), the standard greedy surrogate for
    max_S 0.5 * logdet(I + K_S / noise_variance).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if noise_variance <= 0:
        raise ValueError("info gain needs noise_variance > 0")
    pts = grid.normalized_points()
    m = min(int(T), len(pts))
    prior_var = kernel.signal_variance
    selected: list[int] = []
    profile = np.empty(m)
    total = 0.0
    for j in range(m):
        if not selected:
            var = np.full(len(pts), prior_var)
        else:
            sub = pts[selected]
            k = gram(kernel, sub) + noise_variance * np.eye(len(sub))
            chol = _factorize(k, prior_var)
            ks = gram(kernel, sub, pts)  # (j, P)
            v = solve_triangular(chol, ks, lower=True)
            var = np.clip(prior_var - np.sum(v * v, axis=0), 0.0, None)
        best = int(np.argmax(var))
        total += 0.5 * math.log1p(var[best] / noise_variance)
        profile[j] = total
        selected.append(best)
    return profile


def info_gain(kernel: KernelConfig, grid: HyperGrid, noise_variance: float, T: int) -> float:
    """Greedy estimate of the maximum information gain after T observations."""
    return float(info_gain_profile(kernel, grid, noise_variance, T)[-1])


def conservative_threshold(
    zeta: float, delta: float, B: float, gamma_T: float, T: int, scale_c: float
) -> float:
    """Reduced rejection threshold compensating for search estimation error.

    zeta' = zeta - scale_c * (B*sqrt(gamma_T/T) + sqrt(gamma_T*(gamma_T +
    log(1/delta))/T)) - delta.  May be <= 0, in which case certification
    must be refused by the caller.
    """
    if not (0.0 < delta < zeta < 1.0):
        raise ValueError(f"need 0 < delta < zeta < 1, got delta={delta}, zeta={zeta}")
    if B < 0 or gamma_T < 0:
        raise ValueError("B and gamma_T must be >= 0")
    if T < 1:
        raise ValueError("T must be >= 1")
    if scale_c <= 0:
        raise ValueError("scale_c must be positive")
    regret = B * math.sqrt(gamma_T / T) + math.sqrt(
        gamma_T * (gamma_T + math.log(1.0 / delta)) / T
    )
    return zeta - scale_c * regret - delta
