"""Serve the prosac-oracle/1 protocol over stdin/stdout.

Each request carries the attack hyperparameters as a real vector:
lambda[0] is the PGD step count (rounded to the nearest integer, floored at
0) and lambda[1] the step size.  The budget epsilon and the norm are
process-level configuration, never searched.  Every sample of the frozen
calibration set is attacked per request; the response reports the fraction
of clean-correct samples the attack fooled (and the per-sample indicator
arrays on demand).

The ball constraint is asserted on every sample of every request; an
optional audit file records the worst perturbation norm per request so the
budget can be verified from outside the process.
"""

from __future__ import annotations

import json
import sys

import numpy as np

from .pgd import BUDGET_SLACK, PgdParams, perturbation_norms, pgd_attack
from .task import ToyTask

PROTOCOL_NAME = "prosac-oracle/1"


def decode_lambda(lam: list) -> tuple[int, float]:
    if not isinstance(lam, list) or len(lam) != 2:
        raise ValueError(f"lambda must be [steps, step_size], got {lam!r}")
    steps = max(int(round(float(lam[0]))), 0)
    step_size = float(lam[1])
    if step_size <= 0:
        raise ValueError(f"step_size {step_size} must be positive")
    return steps, step_size


def handshake_doc(task: ToyTask, epsilon: float, norm: str, random_init: bool) -> dict:
    return {
        "protocol": PROTOCOL_NAME,
        "n": task.n,
        "metadata": {
            "attack": "pgd",
            "epsilon": epsilon,
            "norm": norm,
            "random_init": random_init,
            "lambda_encoding": ["steps", "step_size"],
            "model": "logistic-2d",
            "model_seed": task.model_seed,
            "data_seed": task.data_seed,
            "clean_accuracy": task.clean_accuracy,
        },
    }


def handle_request(
    task: ToyTask,
    request: dict,
    epsilon: float,
    norm: str,
    random_init: bool,
) -> tuple[dict, float]:
    """One evaluation: attack the calibration set, reduce the indicators."""
    steps, step_size = decode_lambda(request.get("lambda"))
    params = PgdParams(
        epsilon=epsilon, norm=norm, steps=steps, step_size=step_size,
        random_init=random_init,
    )
    x_adv = pgd_attack(task.model, task.x, task.y, params, seed=int(request.get("seed", 0)))
    norms = perturbation_norms(x_adv, task.x, norm)
    worst = float(norms.max()) if len(norms) else 0.0
    if worst > epsilon + BUDGET_SLACK:
        raise RuntimeError(f"budget violated: |delta| = {worst} > {epsilon}")
    fooled = (task.model.predict(x_adv) != task.y).astype(np.uint8)
    count = int(task.clean_correct.astype(np.int64) @ fooled.astype(np.int64))
    response = {"id": request["id"], "risk": count / task.n, "n": task.n}
    if request.get("per_sample"):
        response["correct"] = task.clean_correct.tolist()
        response["fooled"] = fooled.tolist()
    return response, worst


def serve(
    task: ToyTask,
    epsilon: float,
    norm: str,
    random_init: bool = True,
    audit_path: str | None = None,
    stdin=None,
    stdout=None,
) -> None:
    """Request loop: runs until stdin closes, then returns (exit 0)."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    audit = open(audit_path, "a", encoding="utf-8") if audit_path else None

    def emit(obj: dict) -> None:
        stdout.write(json.dumps(obj) + "\n")
        stdout.flush()

    emit(handshake_doc(task, epsilon, norm, random_init))
    try:
        for line in stdin:
            if not line.strip():
                continue
            request_id = -1
            try:
                request = json.loads(line)
                request_id = request.get("id", -1)
                response, worst = handle_request(task, request, epsilon, norm, random_init)
            except Exception as exc:
                emit({"id": request_id, "error": f"{type(exc).__name__}: {exc}"})
                continue
            if audit is not None:
                audit.write(f"{request_id},{worst!r}\n")
                audit.flush()
            emit(response)
    finally:
        if audit is not None:
            audit.close()
