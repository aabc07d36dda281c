"""Command-line front end: certify, scan, simulate, compare.

A run is described by one strictly-validated JSON config document; the
common flags --seed/--jobs/--output/--format override the corresponding
config fields (flag wins).  Every emitted file is a pure function of
(config, seed): no timestamps, sorted JSON keys, repr floats.  The verdict
document always embeds the full normalized config so it can be archived
and replayed.

Exit codes for certify: 0 certified_safe, 1 not_certified, 2 indeterminate,
3 error (config, oracle, or I/O trouble; diagnostics go to stderr).  When
method is "both", the exit code is the most pessimistic of the two
verdicts (not_certified beats indeterminate beats certified_safe).  scan,
simulate, and compare exit 0 on success and 3 on error.

Seed discipline: the single top-level seed S derives every subsidiary
stream through split_seed -- split_seed(S, "grid-eval") for grid-path
oracle evaluations (table oracles in "average" mode use the AVERAGE
sentinel instead), split_seed(S, "ucb") for the search loop, and
split_seed(S, "simulate") for Monte Carlo trials.

Config layout (defaults in parentheses):

    {
      "spec":   {"alpha": 0.10, "zeta": 0.05, "delta": 0.01},
      "grid":   {"axes": [{"name": ..., "values": [...]}, ...]},
      "oracle": {"kind": "analytic" | "table" | "subprocess", ...},
      "method": "grid" ("grid" | "gp_ucb" | "both"),
      "ucb":    {"rounds": 50, "beta": 0.1, "noise_std": 0.0,
                 "gp_noise_std": null, "B": 1.0, "scale_c": 1.0,
                 "kernel": {"smoothness": 2.5, "length_scale": 1.0,
                            "signal_variance": 1.0}},
      "seed":   0,
      "jobs":   1,
      "output": {"path": null, "format": "json"},
      "sweep":  {"label": ..., "values": [...]},          # scan only
      "simulate": {"trials": 1000, "coupling": "shared"}  # simulate only
    }

Oracle sections: analytic needs "n" and "surface" ({"family", "params"});
table needs "path" (+ "format": "csv"|"json", "runs_mode":
"average"|"seeded"); subprocess needs "command" (argv list) and accepts
"per_sample", "timeout_secs", "metadata".  In scan configs the token
"{sweep}" anywhere inside the oracle section is replaced by the current
sweep value before the oracle is built.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import re
import sys
from dataclasses import dataclass, replace
from typing import Any

from .certifier import (
    CERTIFIED_SAFE,
    INDETERMINATE,
    NOT_CERTIFIED,
    SafetySpec,
    ThresholdParams,
    Verdict,
    compare_methods,
    grid_certify,
    simulate_type1,
    ucb_certify,
)
from .grid import HyperGrid
from .gp_ucb import KernelConfig, UcbConfig
from .oracle import (
    AVERAGE,
    AnalyticOracle,
    AnalyticSurface,
    RiskOracle,
    SubprocessOracle,
    TableOracle,
    load_table,
)
from .seeds import split_seed

__all__ = ["main"]

_EXIT_BY_DECISION = {CERTIFIED_SAFE: 0, NOT_CERTIFIED: 1, INDETERMINATE: 2}


class UsageError(ValueError):
    """Bad flags or config; maps to exit code 3."""


def _check_keys(obj: dict, allowed: set[str], context: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise UsageError(f"{context}: unknown keys {sorted(unknown)}")


@dataclass(frozen=True)
class RunConfig:
    """Normalized run description; serializing and re-parsing it is stable."""

    spec: SafetySpec
    grid_axes: dict | None
    oracle: dict
    method: str
    ucb: UcbConfig
    kernel: KernelConfig
    threshold: ThresholdParams
    seed: int
    jobs: int
    output_path: str | None
    output_format: str
    sweep: dict | None
    simulate: dict

    def to_jsonable(self) -> dict:
        kernel_ls = self.kernel.length_scale
        return {
            "spec": self.spec.to_jsonable(),
            "grid": self.grid_axes,
            "oracle": self.oracle,
            "method": self.method,
            "ucb": {
                "rounds": self.ucb.rounds,
                "beta": self.ucb.beta,
                "noise_std": self.ucb.noise_std,
                "gp_noise_std": self.ucb.gp_noise_std,
                "B": self.threshold.B,
                "scale_c": self.threshold.scale_c,
                "kernel": {
                    "smoothness": self.kernel.smoothness,
                    "length_scale": list(kernel_ls)
                    if isinstance(kernel_ls, tuple)
                    else kernel_ls,
                    "signal_variance": self.kernel.signal_variance,
                },
            },
            "seed": self.seed,
            "jobs": self.jobs,
            "output": {"path": self.output_path, "format": self.output_format},
            "sweep": self.sweep,
            "simulate": self.simulate,
        }


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    _check_keys(
        doc,
        {"spec", "grid", "oracle", "method", "ucb", "seed", "jobs", "output",
         "sweep", "simulate"},
        "config",
    )

    spec_doc = dict(doc.get("spec") or {})
    _check_keys(spec_doc, {"alpha", "zeta", "delta"}, "config.spec")
    spec = SafetySpec(
        alpha=float(spec_doc.get("alpha", 0.10)),
        zeta=float(spec_doc.get("zeta", 0.05)),
        delta=float(spec_doc.get("delta", 0.01)),
    )

    grid_axes = doc.get("grid")
    if grid_axes is not None:
        _check_keys(grid_axes, {"axes"}, "config.grid")
        HyperGrid.from_jsonable(grid_axes)  # validate now, build later

    oracle_doc = doc.get("oracle")
    if not isinstance(oracle_doc, dict):
        raise UsageError("config.oracle is required")
    _validate_oracle_config(oracle_doc)

    method = doc.get("method", "grid")
    if method not in ("grid", "gp_ucb", "both"):
        raise UsageError(f"config.method {method!r} not one of grid/gp_ucb/both")

    ucb_doc = dict(doc.get("ucb") or {})
    _check_keys(
        ucb_doc,
        {"rounds", "beta", "noise_std", "gp_noise_std", "B", "scale_c", "kernel"},
        "config.ucb",
    )
    kernel_doc = dict(ucb_doc.get("kernel") or {})
    _check_keys(kernel_doc, {"smoothness", "length_scale", "signal_variance"},
                "config.ucb.kernel")
    ls = kernel_doc.get("length_scale", 1.0)
    kernel = KernelConfig(
        smoothness=float(kernel_doc.get("smoothness", 2.5)),
        length_scale=tuple(float(v) for v in ls) if isinstance(ls, list) else float(ls),
        signal_variance=float(kernel_doc.get("signal_variance", 1.0)),
    )
    gp_noise = ucb_doc.get("gp_noise_std")
    ucb = UcbConfig(
        rounds=int(ucb_doc.get("rounds", 50)),
        beta=float(ucb_doc.get("beta", 0.1)),
        noise_std=float(ucb_doc.get("noise_std", 0.0)),
        seed=0,  # derived from the top-level seed at run time
        gp_noise_std=None if gp_noise is None else float(gp_noise),
    )
    threshold = ThresholdParams(
        B=float(ucb_doc.get("B", 1.0)), scale_c=float(ucb_doc.get("scale_c", 1.0))
    )

    output_doc = dict(doc.get("output") or {})
    _check_keys(output_doc, {"path", "format"}, "config.output")
    output_format = output_doc.get("format", "json")
    if output_format not in ("json", "csv"):
        raise UsageError(f"config.output.format {output_format!r} not json/csv")

    sweep = doc.get("sweep")
    if sweep is not None:
        _check_keys(sweep, {"label", "values"}, "config.sweep")

    simulate_doc = dict(doc.get("simulate") or {})
    _check_keys(simulate_doc, {"trials", "coupling"}, "config.simulate")
    simulate_doc.setdefault("trials", 1000)
    simulate_doc.setdefault("coupling", "shared")

    return RunConfig(
        spec=spec,
        grid_axes=grid_axes,
        oracle=oracle_doc,
        method=method,
        ucb=ucb,
        kernel=kernel,
        threshold=threshold,
        seed=int(doc.get("seed", 0)),
        jobs=int(doc.get("jobs", 1)),
        output_path=output_doc.get("path"),
        output_format=output_format,
        sweep=sweep,
        simulate=simulate_doc,
    )


def _validate_oracle_config(doc: dict) -> None:
    kind = doc.get("kind")
    common = {"kind", "metadata"}
    if kind == "analytic":
        _check_keys(doc, common | {"n", "surface"}, "config.oracle")
        if "n" not in doc or "surface" not in doc:
            raise UsageError("analytic oracle needs 'n' and 'surface'")
    elif kind == "table":
        _check_keys(doc, common | {"path", "format", "runs_mode"}, "config.oracle")
        if "path" not in doc:
            raise UsageError("table oracle needs 'path'")
        if doc.get("runs_mode", "average") not in ("average", "seeded"):
            raise UsageError("oracle.runs_mode must be 'average' or 'seeded'")
    elif kind == "subprocess":
        _check_keys(doc, common | {"command", "per_sample", "timeout_secs"},
                    "config.oracle")
        command = doc.get("command")
        if not isinstance(command, list) or not command:
            raise UsageError("subprocess oracle needs a non-empty 'command' list")
    else:
        raise UsageError(f"oracle.kind {kind!r} not one of analytic/table/subprocess")


def build_oracle(oracle_doc: dict) -> RiskOracle:
    kind = oracle_doc["kind"]
    metadata = oracle_doc.get("metadata") or {}
    if kind == "analytic":
        surface = AnalyticSurface.from_jsonable(oracle_doc["surface"])
        return AnalyticOracle(surface, n=int(oracle_doc["n"]), metadata=metadata)
    if kind == "table":
        table = load_table(oracle_doc["path"], oracle_doc.get("format", "csv"))
        return TableOracle(table, metadata=metadata)
    timeout = oracle_doc.get("timeout_secs")
    return SubprocessOracle(
        oracle_doc["command"],
        per_sample=bool(oracle_doc.get("per_sample", False)),
        timeout=None if timeout is None else float(timeout),
        metadata=metadata,
    )


def resolve_grid(cfg_grid_axes: dict | None, oracle: RiskOracle) -> HyperGrid:
    table_grid = oracle.table.grid if isinstance(oracle, TableOracle) else None
    if cfg_grid_axes is None:
        if table_grid is None:
            raise UsageError("config.grid is required for this oracle kind")
        return table_grid
    grid = HyperGrid.from_jsonable(cfg_grid_axes)
    if table_grid is not None:
        import numpy as np

        if grid.axis_names != table_grid.axis_names or not np.array_equal(
            grid.points, table_grid.points
        ):
            raise UsageError("config.grid does not match the risk table's grid")
    return grid


def _grid_eval_seed(cfg: RunConfig, oracle: RiskOracle) -> int:
    if isinstance(oracle, TableOracle) and cfg.oracle.get("runs_mode", "average") == "average":
        return AVERAGE
    return split_seed(cfg.seed, "grid-eval")


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _json_text(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _csv_text(header: list[str], rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _closing(oracle: RiskOracle):
    if hasattr(oracle, "close"):
        return contextlib.closing(oracle)
    return contextlib.nullcontext(oracle)


def _run_methods(cfg: RunConfig, oracle: RiskOracle, grid: HyperGrid) -> dict[str, Verdict]:
    verdicts: dict[str, Verdict] = {}
    if cfg.method in ("grid", "both"):
        verdicts["grid"] = grid_certify(
            oracle, grid, cfg.spec, seed=_grid_eval_seed(cfg, oracle), jobs=cfg.jobs
        )
    if cfg.method in ("gp_ucb", "both"):
        ucb_cfg = replace(cfg.ucb, seed=split_seed(cfg.seed, "ucb"))
        verdicts["gp_ucb"] = ucb_certify(
            oracle, grid, cfg.spec, ucb_cfg, kernel=cfg.kernel,
            threshold_params=cfg.threshold,
        )
    return verdicts


def cmd_certify(cfg: RunConfig) -> int:
    oracle = build_oracle(cfg.oracle)
    with _closing(oracle):
        grid = resolve_grid(cfg.grid_axes, oracle)
        verdicts = _run_methods(cfg, oracle, grid)
    doc = {
        "config": cfg.to_jsonable(),
        "verdicts": {k: v.to_jsonable() for k, v in verdicts.items()},
    }
    if cfg.output_format == "json":
        _write_text(cfg.output_path, _json_text(doc))
    else:
        rows = [
            [k, v.decision, v.p_star, v.threshold]
            for k, v in sorted(verdicts.items())
        ]
        _write_text(cfg.output_path, _csv_text(["method", "decision", "p_star", "threshold"], rows))
    return max(_EXIT_BY_DECISION[v.decision] for v in verdicts.values())


def _substitute_sweep(node: Any, value: Any) -> Any:
    if isinstance(node, dict):
        return {k: _substitute_sweep(v, value) for k, v in node.items()}
    if isinstance(node, list):
        return [_substitute_sweep(v, value) for v in node]
    if isinstance(node, str):
        if node == "{sweep}":
            return value
        if "{sweep}" in node:
            return node.replace("{sweep}", str(value))
    return node


def cmd_scan(cfg: RunConfig) -> int:
    if not cfg.sweep or not cfg.sweep.get("values"):
        raise UsageError("scan needs config.sweep with a non-empty 'values' list")
    if cfg.method == "both":
        raise UsageError("scan certifies with one method; set method to grid or gp_ucb")
    label = cfg.sweep.get("label", "sweep")
    rows: list[list[Any]] = []
    for value in sorted(cfg.sweep["values"]):
        oracle_doc = _substitute_sweep(cfg.oracle, value)
        try:
            oracle = build_oracle(oracle_doc)
            with _closing(oracle):
                grid = resolve_grid(cfg.grid_axes, oracle)
                verdicts = _run_methods(cfg, oracle, grid)
            verdict = verdicts[cfg.method]
            rows.append([value, verdict.p_star, verdict.decision, ""])
        except UsageError:
            raise
        except Exception as exc:  # per-point failures recorded; the scan continues
            rows.append([value, "", "error", str(exc)])
    if cfg.output_format == "json":
        doc = {
            "config": cfg.to_jsonable(),
            "rows": [
                {label: r[0], "p_star": r[1], "decision": r[2], "error": r[3]}
                for r in rows
            ],
        }
        _write_text(cfg.output_path, _json_text(doc))
    else:
        _write_text(cfg.output_path, _csv_text([label, "p_star", "decision", "error"], rows))
    return 0


def cmd_simulate(cfg: RunConfig, trials: int | None) -> int:
    trials = int(cfg.simulate["trials"]) if trials is None else trials
    if trials < 1:
        raise UsageError("simulate needs trials >= 1")
    if cfg.oracle.get("kind") != "analytic":
        raise UsageError("simulate needs an analytic oracle (known true risk surface)")
    if cfg.method == "both":
        raise UsageError("simulate runs one method; set method to grid or gp_ucb")
    surface = AnalyticSurface.from_jsonable(cfg.oracle["surface"])
    grid = HyperGrid.from_jsonable(cfg.grid_axes) if cfg.grid_axes else None
    if grid is None:
        raise UsageError("config.grid is required for simulate")
    report = simulate_type1(
        surface,
        grid,
        cfg.spec,
        n=int(cfg.oracle["n"]),
        trials=trials,
        method=cfg.method,
        seed=split_seed(cfg.seed, "simulate"),
        coupling=cfg.simulate["coupling"],
        ucb=cfg.ucb if cfg.method == "gp_ucb" else None,
        kernel=cfg.kernel,
        threshold_params=cfg.threshold,
    )
    doc = {"config": cfg.to_jsonable(), "report": report.to_jsonable()}
    if cfg.output_format == "json":
        _write_text(cfg.output_path, _json_text(doc))
    else:
        r = report.to_jsonable()
        header = sorted(k for k in r if not isinstance(r[k], dict))
        _write_text(cfg.output_path, _csv_text(header, [[r[k] for k in header]]))
    return 0


def cmd_compare(cfg: RunConfig) -> int:
    oracle = build_oracle(cfg.oracle)
    with _closing(oracle):
        grid = resolve_grid(cfg.grid_axes, oracle)
        ucb_cfg = replace(cfg.ucb, seed=split_seed(cfg.seed, "ucb"))
        report = compare_methods(
            oracle, grid, cfg.spec, ucb_cfg, kernel=cfg.kernel,
            threshold_params=cfg.threshold,
        )
    summary = {"config": cfg.to_jsonable(), "comparison": report.to_jsonable()}
    base = re.sub(r"\.json$", "", cfg.output_path) if cfg.output_path else None
    _write_text(base + ".json" if base else None, _json_text(summary))
    grid_rows = [
        [e["index"], *e["lambda"], e["risk_hat"], e["p_value"]]
        for e in report.grid_verdict.to_jsonable()["evidence"]
    ]
    axis_names = list(grid.axis_names)
    grid_csv = _csv_text(["index", *axis_names, "risk_hat", "p_value"], grid_rows)
    traj_rows = [
        [r["round"], *r["lambda"], r["p_hat"], r["running_mean"], r["grid_p_star"]]
        for r in report.trajectory_rows()
    ]
    traj_csv = _csv_text(
        ["round", *axis_names, "p_hat", "running_mean", "grid_p_star"], traj_rows
    )
    if base:
        _write_text(base + ".grid.csv", grid_csv)
        _write_text(base + ".trajectory.csv", traj_csv)
    else:
        sys.stdout.write(grid_csv)
        sys.stdout.write(traj_csv)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="prosac", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("certify", "scan", "simulate", "compare"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--jobs", type=int, default=None, help="worker cap for grid evaluation")
        p.add_argument("--output", default=None, help="override config output path")
        p.add_argument("--format", choices=("json", "csv"), default=None,
                       help="override config output format")
        if name == "simulate":
            p.add_argument("--trials", type=int, default=None,
                           help="override config trial count")
    return parser


def _load_config(args) -> RunConfig:
    try:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None
    cfg = parse_config(doc)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.jobs is not None:
        cfg = replace(cfg, jobs=args.jobs)
    if args.output is not None:
        cfg = replace(cfg, output_path=args.output)
    if args.format is not None:
        cfg = replace(cfg, output_format=args.format)
    return cfg


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load_config(args)
        if args.command == "certify":
            return cmd_certify(cfg)
        if args.command == "scan":
            return cmd_scan(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.trials)
        return cmd_compare(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
