"""Entry point: python -m prosac_runner --epsilon 0.1 --norm linf ..."""

import argparse
import sys

from .protocol import serve
from .task import make_task


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="prosac_runner")
    parser.add_argument("--epsilon", type=float, default=0.1,
                        help="attack budget (ball radius)")
    parser.add_argument("--norm", choices=("linf", "l2"), default="linf")
    parser.add_argument("--n", type=int, default=500, help="calibration-set size")
    parser.add_argument("--model-seed", type=int, default=0)
    parser.add_argument("--data-seed", type=int, default=0)
    parser.add_argument("--no-random-init", action="store_true",
                        help="start every attack exactly at the clean input")
    parser.add_argument("--budget-audit", default=None,
                        help="append per-request worst perturbation norms to this file")
    args = parser.parse_args(argv)
    if args.epsilon < 0:
        parser.error("--epsilon must be >= 0")
    if args.n < 1:
        parser.error("--n must be >= 1")
    task = make_task(n=args.n, model_seed=args.model_seed, data_seed=args.data_seed)
    serve(
        task,
        epsilon=args.epsilon,
        norm=args.norm,
        random_init=not args.no_random_init,
        audit_path=args.budget_audit,
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
