"""The toy classification task the runner defends.

Two 2-D Gaussian classes, easy by construction (clean accuracy > 0.9), a
logistic-regression classifier trained once at startup on its own training
draw, and a fixed calibration set that stays identical across all protocol
requests in one process lifetime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeds import rng_from

_CLASS_MEAN = np.array([0.75, 0.75])
_CLASS_STD = 0.70
_TRAIN_SIZE = 4000


@dataclass(frozen=True)
class LogisticModel:
    """Linear logit classifier: p(y=1 | x) = sigmoid(x @ weights + bias)."""

    weights: np.ndarray
    bias: float

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.logits(x) > 0).astype(np.uint8)

    def loss_grad_x(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Gradient of the cross-entropy loss w.r.t. the inputs.

        d/dx CE(sigmoid(w.x + b), y) = (sigmoid - y) * w.
        """
        p = _sigmoid(self.logits(x))
        return (p - y)[:, None] * self.weights[None, :]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sample_points(rng: np.random.Generator, count: int) -> tuple[np.ndarray, np.ndarray]:
    y = (np.arange(count) % 2).astype(np.uint8)  # balanced labels
    signs = np.where(y[:, None] == 1, 1.0, -1.0)
    x = signs * _CLASS_MEAN + _CLASS_STD * rng.standard_normal((count, 2))
    return x, y


def train_model(model_seed: int) -> LogisticModel:
    """Full-batch gradient descent on a fresh training draw."""
    rng = rng_from(model_seed, "train-data")
    x, y = sample_points(rng, _TRAIN_SIZE)
    init = rng_from(model_seed, "init")
    w = 0.01 * init.standard_normal(2)
    b = 0.0
    lr = 0.5
    for _ in range(400):
        p = _sigmoid(x @ w + b)
        err = p - y
        w -= lr * (x.T @ err) / len(y)
        b -= lr * float(err.mean())
    return LogisticModel(weights=w, bias=float(b))


@dataclass(frozen=True)
class ToyTask:
    """Trained model plus the frozen calibration set."""

    model: LogisticModel
    x: np.ndarray  # (n, 2)
    y: np.ndarray  # (n,)
    clean_correct: np.ndarray  # (n,) uint8
    model_seed: int
    data_seed: int

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def clean_accuracy(self) -> float:
        return float(self.clean_correct.mean())


def make_task(n: int = 500, model_seed: int = 0, data_seed: int = 0) -> ToyTask:
    model = train_model(model_seed)
    x, y = sample_points(rng_from(data_seed, "calibration"), n)
    correct = (model.predict(x) == y).astype(np.uint8)
    task = ToyTask(
        model=model, x=x, y=y, clean_correct=correct,
        model_seed=model_seed, data_seed=data_seed,
    )
    if task.clean_accuracy <= 0.9:
        raise RuntimeError(
            f"toy task too hard: clean accuracy {task.clean_accuracy:.3f} <= 0.9"
        )
    return task
