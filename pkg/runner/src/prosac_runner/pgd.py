"""Projected gradient descent on the classifier loss.

Iterative ascent on the per-sample cross-entropy, projected back onto the
epsilon-ball (l-inf or l2) after every step.  The residual attack
randomness is the in-ball random initialization, seeded per (request seed,
sample index) so a request is reproducible sample by sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeds import rng_from
from .task import LogisticModel

BUDGET_SLACK = 1e-6


@dataclass(frozen=True)
class PgdParams:
    epsilon: float
    norm: str = "linf"
    steps: int = 10
    step_size: float = 0.01
    random_init: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.norm not in ("linf", "l2"):
            raise ValueError(f"norm {self.norm!r} not one of linf/l2")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")


def _init_noise(params: PgdParams, dim: int, seed: int, count: int) -> np.ndarray:
    """Uniform draws inside the ball, one independent stream per sample."""
    noise = np.empty((count, dim))
    for i in range(count):
        rng = rng_from(seed, "init", i)
        if params.norm == "linf":
            noise[i] = rng.uniform(-params.epsilon, params.epsilon, size=dim)
        else:
            direction = rng.standard_normal(dim)
            norm = np.linalg.norm(direction)
            if norm == 0.0:
                noise[i] = 0.0
            else:
                radius = params.epsilon * rng.random() ** (1.0 / dim)
                noise[i] = direction / norm * radius
    return noise


def _project(delta: np.ndarray, params: PgdParams) -> np.ndarray:
    if params.norm == "linf":
        return np.clip(delta, -params.epsilon, params.epsilon)
    norms = np.linalg.norm(delta, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(norms > params.epsilon, params.epsilon / norms, 1.0)
    return delta * scale


def perturbation_norms(x_adv: np.ndarray, x: np.ndarray, norm: str) -> np.ndarray:
    delta = x_adv - x
    if norm == "linf":
        return np.max(np.abs(delta), axis=1)
    return np.linalg.norm(delta, axis=1)


def pgd_attack(
    model: LogisticModel,
    x: np.ndarray,
    y: np.ndarray,
    params: PgdParams,
    seed: int = 0,
) -> np.ndarray:
    """Attack a batch of samples; returns adversarial inputs inside the ball."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if params.epsilon == 0.0:
        return x.copy()
    if params.random_init:
        delta = _init_noise(params, x.shape[1], seed, len(x))
    else:
        delta = np.zeros_like(x)
    for _ in range(params.steps):
        grad = model.loss_grad_x(x + delta, y)
        if not np.all(np.isfinite(grad)):
            raise RuntimeError("non-finite loss gradient during the attack")
        if params.norm == "linf":
            delta = delta + params.step_size * np.sign(grad)
        else:
            norms = np.linalg.norm(grad, axis=1, keepdims=True)
            scaled = np.divide(grad, norms, out=np.zeros_like(grad), where=norms > 0)
            delta = delta + params.step_size * scaled
        delta = _project(delta, params)
    return x + delta
