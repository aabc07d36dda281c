"""Reference PGD attack runner for the prosac-oracle/1 protocol."""

from .pgd import BUDGET_SLACK, PgdParams, perturbation_norms, pgd_attack
from .protocol import decode_lambda, handle_request, serve
from .task import LogisticModel, ToyTask, make_task, train_model

__version__ = "0.1.0"
